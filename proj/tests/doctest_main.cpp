#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "vlp/common.hpp"

int main(int argc, char** argv) {
  vlp::tune_allocator();
  return doctest::Context(argc, argv).run();
}
