#include "trellis/gdsw.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

namespace trellis {

std::size_t InterfaceClassification::index_of(GlobalIndex node) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), node);
  TRELLIS_REQUIRE(it != nodes.end() && *it == node, "node is not an interface node");
  return static_cast<std::size_t>(it - nodes.begin());
}

int InterfaceClassification::component_column(GlobalIndex component_id) const {
  auto it = std::lower_bound(component_ids.begin(), component_ids.end(), component_id);
  TRELLIS_REQUIRE(it != component_ids.end() && *it == component_id, "unknown component id");
  return static_cast<int>(it - component_ids.begin());
}

InterfaceClassification identify_interface(const CsrMatrix& a) {
  const CommContext& ctx = a.row_map().ctx();
  const std::int64_t smallest = ctx.all_reduce_scalar(std::int64_t{a.local_rows()}, ReduceOp::min);
  TRELLIS_REQUIRE(a.row_map().global_count() == 0 || smallest > 0,
                  "empty subdomain: every rank must own at least one row");

  const CsrMatrix sym = add(a, transpose(a), 0.5, 0.5);
  OwnershipDirectory directory(a.row_map());
  const int my_rank = ctx.rank();

  // Local pass: signatures of owned nodes; interface iff >= 2 subdomains.
  // Each contribution carries the node, its signature, and its neighbors so
  // the replicated component analysis has the interface adjacency.
  Bytes contribution;
  std::vector<std::pair<GlobalIndex, std::vector<int>>> local_interface;
  std::vector<std::vector<GlobalIndex>> local_neighbors;
  for (LocalIndex i = 0; i < sym.local_rows(); ++i) {
    const GlobalIndex g = sym.row_map().global_index(i);
    std::set<int> subs = {my_rank};
    std::vector<GlobalIndex> neighbors;
    for (LocalIndex c : sym.row_cols(i)) {
      const GlobalIndex ng = sym.col_global(c);
      if (ng == g) continue;
      neighbors.push_back(ng);
      subs.insert(directory.owner(ng));
    }
    if (subs.size() >= 2) {
      local_interface.emplace_back(g, std::vector<int>(subs.begin(), subs.end()));
      local_neighbors.push_back(std::move(neighbors));
    }
  }
  put<std::uint64_t>(contribution, local_interface.size());
  for (std::size_t k = 0; k < local_interface.size(); ++k) {
    put<GlobalIndex>(contribution, local_interface[k].first);
    put_span<int>(contribution, local_interface[k].second);
    put_span<GlobalIndex>(contribution, local_neighbors[k]);
  }

  // Replicated assembly, identical on every rank.
  std::map<GlobalIndex, std::vector<int>> signature_of;
  std::map<GlobalIndex, std::vector<GlobalIndex>> neighbors_of;
  for (const Bytes& part : ctx.all_gather(contribution)) {
    ByteReader reader(part);
    const auto count = reader.get<std::uint64_t>();
    for (std::uint64_t k = 0; k < count; ++k) {
      const auto g = reader.get<GlobalIndex>();
      signature_of[g] = reader.get_vector<int>();
      neighbors_of[g] = reader.get_vector<GlobalIndex>();
    }
  }

  InterfaceClassification out;
  for (const auto& [g, sig] : signature_of) {
    out.nodes.push_back(g);
    out.signatures.push_back(sig);
  }

  // Connected components among nodes of identical signature (breadth-first
  // in ascending order; ids are deterministic: lowest global in component).
  out.component_of.assign(out.nodes.size(), -1);
  std::map<GlobalIndex, std::pair<GlobalIndex, int>> component_info;  // id -> (size, signature size)
  for (std::size_t s = 0; s < out.nodes.size(); ++s) {
    if (out.component_of[s] != -1) continue;
    const GlobalIndex root = out.nodes[s];
    std::vector<std::size_t> queue = {s};
    out.component_of[s] = root;
    GlobalIndex size = 0;
    while (!queue.empty()) {
      const std::size_t cur = queue.back();
      queue.pop_back();
      ++size;
      for (GlobalIndex ng : neighbors_of.at(out.nodes[cur])) {
        auto it = std::lower_bound(out.nodes.begin(), out.nodes.end(), ng);
        if (it == out.nodes.end() || *it != ng) continue;  // neighbor not interface
        const std::size_t ni = static_cast<std::size_t>(it - out.nodes.begin());
        if (out.component_of[ni] != -1) continue;
        if (out.signatures[ni] != out.signatures[s]) continue;
        out.component_of[ni] = root;
        queue.push_back(ni);
      }
    }
    component_info[root] = {size, static_cast<int>(out.signatures[s].size())};
  }

  for (const auto& [id, info] : component_info) {
    out.component_ids.push_back(id);
    const bool vertex = info.second >= 3 || info.first == 1;
    out.component_class.push_back(vertex ? InterfaceClass::vertex : InterfaceClass::edge);
  }
  return out;
}

CsrMatrix build_coarse_basis(const CsrMatrix& a, const InterfaceClassification& cls) {
  TRELLIS_REQUIRE(a.row_map().same_as(a.domain_map()), "coarse basis requires row map == domain map");
  const Map& row_map = a.row_map();
  const CommContext& ctx = row_map.ctx();
  const GlobalIndex coarse_dim = static_cast<GlobalIndex>(cls.component_ids.size());

  // Coarse column c is owned by the rank owning the component's root node,
  // giving a deterministic one-to-one coarse map.
  std::vector<GlobalIndex> my_coarse;
  for (std::size_t c = 0; c < cls.component_ids.size(); ++c)
    if (row_map.owns_global(cls.component_ids[c])) my_coarse.push_back(static_cast<GlobalIndex>(c));
  Map coarse_map = Map::from_globals(coarse_dim, my_coarse, ctx);

  // Interface block: indicator of the component (constant nullspace).
  std::vector<Triplet> entries;
  std::vector<LocalIndex> interior;           // local indices of interior nodes
  std::unordered_map<GlobalIndex, int> interface_column;  // owned interface node -> column
  for (LocalIndex i = 0; i < a.local_rows(); ++i) {
    const GlobalIndex g = row_map.global_index(i);
    auto it = std::lower_bound(cls.nodes.begin(), cls.nodes.end(), g);
    if (it != cls.nodes.end() && *it == g) {
      const std::size_t s = static_cast<std::size_t>(it - cls.nodes.begin());
      const int col = cls.component_column(cls.component_of[s]);
      entries.push_back({g, static_cast<GlobalIndex>(col), 1.0});
      interface_column[g] = col;
    } else {
      interior.push_back(i);
    }
  }

  // Discrete-harmonic extension per subdomain: A_II phi_I = -A_IG phi_G.
  // Interior rows couple only within the subdomain, so the solve is local.
  if (!interior.empty() && coarse_dim > 0) {
    const LocalIndex ni = static_cast<LocalIndex>(interior.size());
    std::unordered_map<LocalIndex, LocalIndex> interior_pos;
    for (LocalIndex p = 0; p < ni; ++p) interior_pos[interior[static_cast<std::size_t>(p)]] = p;

    // Columns active on this subdomain.
    std::map<int, int> active;  // coarse column -> dense rhs column
    MatX a_ii = MatX::Zero(ni, ni);
    for (LocalIndex p = 0; p < ni; ++p) {
      const LocalIndex i = interior[static_cast<std::size_t>(p)];
      const auto cols = a.row_cols(i);
      const auto vals = a.row_vals(i);
      for (std::size_t j = 0; j < cols.size(); ++j) {
        TRELLIS_REQUIRE(a.col_is_owned(cols[j]),
                        "interior node couples across the subdomain boundary; classification is inconsistent");
        const LocalIndex other = cols[j];  // owned column == local row index
        auto pos = interior_pos.find(other);
        if (pos != interior_pos.end()) {
          a_ii(p, pos->second) += vals[j];
        } else {
          const GlobalIndex og = row_map.global_index(other);
          active.try_emplace(interface_column.at(og), 0);
        }
      }
    }
    int next = 0;
    for (auto& [col, slot] : active) slot = next++;

    MatX rhs = MatX::Zero(ni, next);
    for (LocalIndex p = 0; p < ni; ++p) {
      const LocalIndex i = interior[static_cast<std::size_t>(p)];
      const auto cols = a.row_cols(i);
      const auto vals = a.row_vals(i);
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const LocalIndex other = cols[j];
        if (interior_pos.count(other)) continue;
        const GlobalIndex og = row_map.global_index(other);
        rhs(p, active.at(interface_column.at(og))) -= vals[j];  // phi_G = 1 on the component
      }
    }

    Eigen::FullPivLU<MatX> lu(a_ii);
    TRELLIS_REQUIRE(lu.isInvertible(), "singular interior block in coarse basis extension");
    MatX phi_i = lu.solve(rhs);

    for (LocalIndex p = 0; p < ni; ++p) {
      const GlobalIndex g = row_map.global_index(interior[static_cast<std::size_t>(p)]);
      for (const auto& [col, slot] : active) {
        const Real v = phi_i(p, slot);
        if (v != 0.0) entries.push_back({g, static_cast<GlobalIndex>(col), v});
      }
    }
  }

  return CsrMatrix::from_triplets(row_map, coarse_map, std::move(entries));
}

GdswPreconditioner::GdswPreconditioner(const CsrMatrix& a, const SchwarzConfig& first_level)
    : a_(&a), first_level_(a, first_level), classification_(identify_interface(a)) {
  phi_ = build_coarse_basis(a, classification_);
  coarse_dim_ = phi_.domain_map().global_count();
  if (coarse_dim_ == 0) return;

  // A0 = Phi' (A Phi), accumulated densely and reduced so each rank holds an
  // identical replicated copy (no factor broadcast needed).
  CsrMatrix w = spgemm(a, phi_);
  MatX local = MatX::Zero(coarse_dim_, coarse_dim_);
  for (LocalIndex i = 0; i < a.local_rows(); ++i) {
    const auto pcols = phi_.row_cols(i);
    const auto pvals = phi_.row_vals(i);
    const auto wcols = w.row_cols(i);
    const auto wvals = w.row_vals(i);
    for (std::size_t pj = 0; pj < pcols.size(); ++pj) {
      const GlobalIndex c1 = phi_.col_global(pcols[pj]);
      for (std::size_t wj = 0; wj < wcols.size(); ++wj)
        local(c1, w.col_global(wcols[wj])) += pvals[pj] * wvals[wj];
    }
  }
  std::vector<Real> flat(local.data(), local.data() + local.size());
  std::vector<Real> summed = a.row_map().ctx().all_reduce(flat, ReduceOp::sum);
  a0_ = Eigen::Map<const MatX>(summed.data(), coarse_dim_, coarse_dim_);
  a0_lu_.compute(a0_);
}

void GdswPreconditioner::apply_coarse(const MultiVector& r, MultiVector& z) const {
  z.set_zero();
  if (coarse_dim_ == 0) return;
  const int k = r.num_cols();

  // Phi' r, replicated by reduction.
  MatX local = MatX::Zero(coarse_dim_, k);
  for (LocalIndex i = 0; i < r.local_rows(); ++i) {
    const auto cols = phi_.row_cols(i);
    const auto vals = phi_.row_vals(i);
    for (std::size_t j = 0; j < cols.size(); ++j)
      for (int c = 0; c < k; ++c) local(phi_.col_global(cols[j]), c) += vals[j] * r.at(i, c);
  }
  std::vector<Real> flat(local.data(), local.data() + local.size());
  std::vector<Real> summed = r.map().ctx().all_reduce(flat, ReduceOp::sum);
  MatX rc = Eigen::Map<const MatX>(summed.data(), coarse_dim_, k);

  MatX zc = a0_lu_.solve(rc);

  for (LocalIndex i = 0; i < z.local_rows(); ++i) {
    const auto cols = phi_.row_cols(i);
    const auto vals = phi_.row_vals(i);
    for (std::size_t j = 0; j < cols.size(); ++j)
      for (int c = 0; c < k; ++c) z.at(i, c) += vals[j] * zc(phi_.col_global(cols[j]), c);
  }
}

void GdswPreconditioner::apply(const MultiVector& r, MultiVector& z) const {
  first_level_.apply(r, z);
  if (coarse_dim_ == 0) return;
  MultiVector zc(r.map(), r.num_cols());
  apply_coarse(r, zc);
  z.local() += zc.local();
}

}  // namespace trellis
