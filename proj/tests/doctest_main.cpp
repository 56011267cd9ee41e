#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "ctseg/tuning.hpp"

int main(int argc, char** argv) {
  ctseg::tune_allocator();
  return doctest::Context(argc, argv).run();
}
