#include <cstdio>

int main() {
  std::puts("dsva: cli under construction");
  return 0;
}
