// Single Catch2 translation unit shared by every test binary.
#include <catch2/catch_amalgamated.cpp>
