#define DOCTEST_CONFIG_IMPLEMENT
#include "phantom/tensor.hpp"

#include <doctest.h>

int main(int argc, char** argv) {
  phantom::tune_allocator();
  return doctest::Context(argc, argv).run();
}
