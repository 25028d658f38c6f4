// microXORh driver.
// usage: ./microXORh N seed
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include "cellsXOR.hpp"

int main(int argc, char **argv) {
  if (argc != 3) {
    fprintf(stderr, "usage: %s N seed\n", argv[0]);
    return 1;
  }
  size_t N = strtoull(argv[1], nullptr, 10);
  uint64_t state = strtoull(argv[2], nullptr, 10);
  if (N == 0) {
    fprintf(stderr, "N must be positive\n");
    return 1;
  }

  std::vector<int> input(N * N), output(N * N);
  for (size_t k = 0; k < N * N; k++) {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    input[k] = (int)((state >> 33) & 1);
  }

  cellsXOR(input.data(), output.data(), N);

  uint64_t hash = 0;
  size_t ones = 0;
  for (size_t k = 0; k < N * N; k++) {
    ones += output[k];
    hash = hash * 31 + (uint64_t)output[k] + 1;
  }
  printf("checksum N=%zu ones=%zu hash=%016llx\n", N, ones, (unsigned long long)hash);
  return 0;
}
