// cellsXOR.hpp: the XOR stencil kernel.
#pragma once

#include <cstddef>

#include <omp.h>

inline void cellsXOR(const int *input, int *output, size_t N) {
  #pragma omp parallel for collapse(2)
  for (size_t i = 0; i < N; i++) {
    for (size_t j = 0; j < N; j++) {
      int count = 0;
      if (i > 0 && input[(i-1)*N + j] == 1) count++;
      if (i < N-1 && input[(i+1)*N + j] == 1) count++;
      if (j > 0 && input[i*N + (j-1)] == 1) count++;
      if (j < N-1 && input[i*N + (j+1)] == 1) count++;
      output[i*N + j] = (count == 1) ? 1 : 0;
    }
  }
}
