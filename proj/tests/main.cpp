#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "cpql/runtime.hpp"

int main(int argc, char** argv) {
  cpql::tune_allocator();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
