#include <vector>

#include "rtc/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rtc::dispatch(args);
}
