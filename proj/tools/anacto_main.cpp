#include <cstdio>

int main() {
  std::puts("anacto: subcommands not wired yet");
  return 0;
}
