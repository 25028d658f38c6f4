// nanoXOR: one step of the four-neighbour XOR stencil on an N x N grid.
// usage: ./nanoXOR N seed
#include <cstdint>
#include <cstdio>
#include <cstdlib>

#include <Kokkos_Core.hpp>

void cellsXOR(Kokkos::View<const int *> input, Kokkos::View<int *> output, size_t N) {
  Kokkos::parallel_for(
      "cellsXOR", Kokkos::MDRangePolicy<Kokkos::Rank<2>>({0, 0}, {N, N}), KOKKOS_LAMBDA(const size_t i, const size_t j) {
        int count = 0;
        if (i > 0 && input((i-1)*N + j) == 1) count++;
        if (i < N-1 && input((i+1)*N + j) == 1) count++;
        if (j > 0 && input(i*N + (j-1)) == 1) count++;
        if (j < N-1 && input(i*N + (j+1)) == 1) count++;
        output(i*N + j) = (count == 1) ? 1 : 0;
      });
  Kokkos::fence();
}

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
  Kokkos::initialize(argc, argv);
  {
    Kokkos::View<int *> input("input", N * N), output("output", N * N);
    auto h_input = Kokkos::create_mirror_view(input);
    for (size_t k = 0; k < N * N; k++) {
      state = state * 6364136223846793005ULL + 1442695040888963407ULL;
      h_input(k) = (int)((state >> 33) & 1);
    }
    Kokkos::deep_copy(input, h_input);

    cellsXOR(input, output, N);

    auto h_output = Kokkos::create_mirror_view_and_copy(Kokkos::HostSpace(), output);
    uint64_t hash = 0;
    size_t ones = 0;
    for (size_t k = 0; k < N * N; k++) {
      ones += h_output(k);
      hash = hash * 31 + (uint64_t)h_output(k) + 1;
    }
    printf("checksum N=%zu ones=%zu hash=%016llx\n", N, ones, (unsigned long long)hash);
  }
  Kokkos::finalize();
  return 0;
}
