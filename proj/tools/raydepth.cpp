#include <cstdio>

int main() {
  std::puts("raydepth: subcommands not wired up yet");
  return 1;
}
