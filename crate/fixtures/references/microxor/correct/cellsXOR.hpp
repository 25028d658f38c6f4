// cellsXOR.hpp: the XOR stencil kernel.
#pragma once

#include <cstddef>

// Sets output[i*N + j] to 1 iff exactly one of the four neighbours of
// input[i*N + j] is 1.
void cellsXOR(const int *input, int *output, size_t N);
