#pragma once

#include <string>

#include "mpmdse/cdfg.hpp"
#include "mpmdse/designspace.hpp"
#include "mpmdse/oracle.hpp"

namespace fixtures {

using namespace mpmdse;

inline PragmaDirective directive(std::string name, PragmaKind kind, std::string target,
                                 std::vector<std::string> domain) {
  return {std::move(name), kind, std::move(target), std::move(domain)};
}

/// Triple loop matrix multiply over 16 x 16 tiles.
inline KernelDescription gemm_kernel() {
  KernelDescription k;
  k.kernel_id = "gemm";
  k.source_template =
      "void gemm(float A[256], float B[256], float C[256]) {\n"
      "  __PRAGMA(A)__\n"
      "  __PRAGMA(B)__\n"
      "  for (int i = 0; i < 16; i++) {\n"
      "    __PRAGMA(i.pipe)__\n"
      "    for (int j = 0; j < 16; j++) {\n"
      "      __PRAGMA(j.pipe)__\n"
      "      __PRAGMA(j.unroll)__\n"
      "      for (int k = 0; k < 16; k++) {\n"
      "        __PRAGMA(k.unroll)__\n"
      "        C[i * 16 + j] += A[i * 16 + k] * B[k * 16 + j];\n"
      "      }\n"
      "    }\n"
      "  }\n"
      "}\n";
  k.loops = {{"i", 16, {}, std::nullopt, {}},
             {"j", 16, {0, 0, 1, 1}, "i", {}},
             {"k", 16, {1, 1, 2, 0}, "j", {{0, 2}, {1, 2}, {2, 3}}}};
  k.arrays = {{"A", 256}, {"B", 256}};
  return k;
}

/// 4 x 3 x 3 x 3 x 5 x 3 = 1620 configurations.
inline DesignSpace gemm_space() {
  return DesignSpace({directive("A", PragmaKind::array_partition, "A", {"1", "2", "4", "8"}),
                      directive("B", PragmaKind::array_partition, "B", {"1", "2", "4"}),
                      directive("i.pipe", PragmaKind::pipeline, "i", {"off", "on", "flatten"}),
                      directive("j.pipe", PragmaKind::pipeline, "j", {"off", "on", "flatten"}),
                      directive("j.unroll", PragmaKind::unroll, "j", {"1", "2", "4"}),
                      directive("k.unroll", PragmaKind::unroll, "k", {"1", "2", "4", "8", "16"})});
}

inline OracleModel gemm_model() {
  OracleModel m;
  m.kernel = gemm_kernel();
  m.base = {800, 4, 1200, 2};
  m.capacities = {6000, 120, 9000, 40};
  return m;
}

/// Template with slots for only k.unroll, j.pipe and A.
inline KernelDescription gemm_small_kernel() {
  auto k = gemm_kernel();
  k.kernel_id = "gemm_small";
  k.source_template =
      "void gemm(float A[256], float B[256], float C[256]) {\n"
      "  __PRAGMA(A)__\n"
      "  for (int i = 0; i < 16; i++) {\n"
      "    for (int j = 0; j < 16; j++) {\n"
      "      __PRAGMA(j.pipe)__\n"
      "      for (int k = 0; k < 16; k++) {\n"
      "        __PRAGMA(k.unroll)__\n"
      "        C[i * 16 + j] += A[i * 16 + k] * B[k * 16 + j];\n"
      "      }\n"
      "    }\n"
      "  }\n"
      "}\n";
  return k;
}

/// 2 x 3 x 4 = 24 configurations.
inline DesignSpace small_space() {
  return DesignSpace({directive("A", PragmaKind::array_partition, "A", {"1", "2"}),
                      directive("j.pipe", PragmaKind::pipeline, "j", {"off", "on", "flatten"}),
                      directive("k.unroll", PragmaKind::unroll, "k", {"1", "2", "4", "8"})});
}

inline OracleModel small_model() {
  OracleModel m;
  m.kernel = gemm_small_kernel();
  m.base = {800, 4, 1200, 2};
  m.capacities = {4000, 64, 6000, 16};
  return m;
}

}  // namespace fixtures
