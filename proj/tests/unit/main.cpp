#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "vmus/cli.hpp"

int main(int argc, char** argv) {
    vmus::tune_allocator();
    doctest::Context ctx(argc, argv);
    return ctx.run();
}
