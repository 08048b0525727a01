#include <cstdio>

int main() {
  std::puts("trellis: placeholder");
  return 0;
}
