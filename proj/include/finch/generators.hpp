#pragma once

#include <random>

#include "finch/execute.hpp"

namespace finch {

// Seeded synthetic tensors and programs used by tests and the bench suites.
namespace gen {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng) { return std::uniform_real_distribution<>(0, 1)(rng); }
inline int64_t pick(Rng& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

inline Value rand_value(Rng& rng) { return Value::of_float(static_cast<double>(pick(rng, 1, 9))); }

// --- random tensors -----------------------------------------------------------

inline std::vector<CooEntry> random_coo(Rng& rng, const std::vector<int64_t>& dims,
                                        double density, bool boolean = false) {
  std::vector<CooEntry> out;
  std::vector<int64_t> coords(dims.size(), 1);
  std::function<void(size_t)> walk = [&](size_t m) {
    if (m == dims.size()) {
      if (uniform(rng) < density)
        out.push_back({coords, boolean ? Value::of_bool(true) : rand_value(rng)});
      return;
    }
    for (int64_t i = 1; i <= dims[m]; ++i) {
      coords[m] = i;
      walk(m + 1);
    }
  };
  walk(0);
  return out;
}

inline TensorPtr random_tensor(Rng& rng, const std::string& name, const std::string& fmt,
                               const std::vector<int64_t>& dims, double density) {
  bool boolean = fmt.find("Pattern") != std::string::npos ||
                 fmt.find("false") != std::string::npos;
  std::vector<Extent> es;
  for (int64_t d : dims) es.push_back(Extent::sized(d));
  Value fill = parse_level_spec(fmt)->fill();
  auto entries = random_coo(rng, dims, density, boolean);
  return tensor_from_coo(name, es, entries, fill, fmt);
}

// Runs of random values: exercises the run-bearing formats.
inline TensorPtr random_run_tensor(Rng& rng, const std::string& name, const std::string& fmt,
                                   int64_t n) {
  std::vector<CooEntry> entries;
  int64_t at = 1;
  while (at <= n) {
    int64_t width = std::min<int64_t>(n - at + 1, pick(rng, 1, 5));
    if (uniform(rng) < 0.6) {
      Value v = rand_value(rng);
      for (int64_t i = at; i < at + width; ++i) entries.push_back({{i}, v});
    }
    at += width;
  }
  return tensor_from_coo(name, {Extent::sized(n)}, entries, Value::of_float(0.0), fmt);
}

// --- synthetic matrices (bench + acceptance) ------------------------------------

// Banded matrix with the given bandwidth; values are small integers.
inline TensorPtr banded_matrix(Rng& rng, const std::string& name, int64_t n, int64_t bandwidth,
                               const std::string& fmt) {
  std::vector<CooEntry> es;
  for (int64_t j = 1; j <= n; ++j)
    for (int64_t i = std::max<int64_t>(1, j - bandwidth); i <= std::min(n, j + bandwidth); ++i)
      es.push_back({{i, j}, rand_value(rng)});
  return tensor_from_coo(name, {Extent::sized(n), Extent::sized(n)}, es, Value::of_float(0.0),
                         fmt);
}

inline TensorPtr upper_triangular_matrix(Rng& rng, const std::string& name, int64_t n,
                                         const std::string& fmt, double density = 0.3) {
  std::vector<CooEntry> es;
  for (int64_t j = 1; j <= n; ++j)
    for (int64_t i = 1; i <= j; ++i)
      if (uniform(rng) < density) es.push_back({{i, j}, rand_value(rng)});
  return tensor_from_coo(name, {Extent::sized(n), Extent::sized(n)}, es, Value::of_float(0.0),
                         fmt);
}

inline TensorPtr permutation_matrix(Rng& rng, const std::string& name, int64_t n,
                                    const std::string& fmt) {
  std::vector<int64_t> perm(n);
  for (int64_t i = 0; i < n; ++i) perm[i] = i + 1;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<CooEntry> es;
  for (int64_t j = 1; j <= n; ++j) es.push_back({{perm[j - 1], j}, Value::of_float(1.0)});
  return tensor_from_coo(name, {Extent::sized(n), Extent::sized(n)}, es, Value::of_float(0.0),
                         fmt);
}

// Erdos-Renyi: each entry present independently with probability p.
inline std::vector<CooEntry> erdos_renyi_entries(Rng& rng, int64_t n, double p,
                                                 bool boolean = false) {
  std::vector<CooEntry> es;
  // sample by skipping: geometric gaps keep this O(nnz)
  double logq = std::log(1.0 - p);
  int64_t total = n * n;
  int64_t at = 0;
  while (true) {
    double u = uniform(rng);
    int64_t skip = p >= 1.0 ? 0 : static_cast<int64_t>(std::floor(std::log(1.0 - u) / logq));
    at += skip;
    if (at >= total) break;
    int64_t j = at / n + 1, i = at % n + 1;
    es.push_back({{i, j}, boolean ? Value::of_bool(true) : rand_value(rng)});
    at += 1;
  }
  return es;
}

inline TensorPtr erdos_renyi_matrix(Rng& rng, const std::string& name, int64_t n, double p,
                                    const std::string& fmt) {
  bool boolean = fmt.find("Pattern") != std::string::npos;
  return tensor_from_coo(name, {Extent::sized(n), Extent::sized(n)},
                         erdos_renyi_entries(rng, n, p, boolean),
                         parse_level_spec(fmt)->fill(), fmt);
}

// RMAT-style skewed digraph (loops dropped, duplicates merged).
inline TensorPtr rmat_graph(Rng& rng, const std::string& name, int64_t scale, int64_t edges,
                            const std::string& fmt) {
  int64_t n = int64_t(1) << scale;
  std::set<std::pair<int64_t, int64_t>> seen;
  for (int64_t e = 0; e < edges; ++e) {
    int64_t i = 0, j = 0;
    for (int64_t bit = 0; bit < scale; ++bit) {
      double u = uniform(rng);
      int quad = u < 0.57 ? 0 : u < 0.76 ? 1 : u < 0.95 ? 2 : 3;
      i = (i << 1) | (quad & 1);
      j = (j << 1) | (quad >> 1);
    }
    if (i == j) continue;
    seen.insert({i + 1, j + 1});
  }
  std::vector<CooEntry> es;
  bool boolean = fmt.find("Pattern") != std::string::npos;
  for (auto& [i, j] : seen)
    es.push_back({{i, j}, boolean ? Value::of_bool(true) : rand_value(rng)});
  return tensor_from_coo(name, {Extent::sized(n), Extent::sized(n)}, es,
                         parse_level_spec(fmt)->fill(), fmt);
}

// --- grammar-directed random programs ---------------------------------------------

struct FuzzCase {
  std::string source;
  ProgramEnv env;
  std::vector<std::string> outputs;
};

// Formats applicable to arbitrary data at each rank.
inline std::string rand_vec_format(Rng& rng) {
  static const char* fmts[] = {
      "Dense(Element(0.0))",          "SparseList(Element(0.0))",
      "SparseHash(Element(0.0))",     "SparseByteMap(Element(0.0))",
      "RunList(Element(0.0))",        "SparseRunList(Element(0.0))",
      "SparseBlockList(Element(0.0))"};
  return fmts[pick(rng, 0, 6)];
}
inline std::string rand_mat_format(Rng& rng) {
  static const char* fmts[] = {
      "Dense(Dense(Element(0.0)))",         "Dense(SparseList(Element(0.0)))",
      "SparseList(SparseList(Element(0.0)))", "Dense(SparseRunList(Element(0.0)))",
      "SparseHash(SparseHash(Element(0.0)))", "Dense(SparseBlockList(Element(0.0)))",
      "Dense(SparseByteMap(Element(0.0)))"};
  return fmts[pick(rng, 0, 6)];
}
inline std::string rand_out_vec_format(Rng& rng) {
  static const char* fmts[] = {"Dense(Element(0.0))", "SparseList(Element(0.0))",
                               "SparseByteMap(Element(0.0))", "SparseHash(Element(0.0))",
                               "SparseRunList(Element(0.0))"};
  return fmts[pick(rng, 0, 4)];
}
inline std::string rand_out_mat_format(Rng& rng) {
  static const char* fmts[] = {"Dense(Dense(Element(0.0)))", "Dense(SparseList(Element(0.0)))",
                               "SparseHash(SparseHash(Element(0.0)))"};
  return fmts[pick(rng, 0, 2)];
}

inline FuzzCase random_program(Rng& rng) {
  FuzzCase fc;
  int64_t n = pick(rng, 2, 8), m = pick(rng, 2, 8);
  double density = std::vector<double>{0.0, 0.15, 0.4, 1.0}[pick(rng, 0, 3)];
  const char* red_ops[] = {"+", "min", "max"};
  std::string red = std::string("<<") + red_ops[pick(rng, 0, 2)] + ">>=";
  int form = static_cast<int>(pick(rng, 0, 6));
  switch (form) {
    case 0: {  // reduction of a pointwise product
      fc.env.tensors["x"] = random_tensor(rng, "x", rand_vec_format(rng), {n}, density);
      fc.env.tensors["y"] = random_tensor(rng, "y", rand_vec_format(rng), {n}, density);
      fc.env.tensors["s"] = make_tensor("s", "Element(0.0)");
      fc.source = "s .= 0.0\nfor i = _\n  s[] " + red + " x[i] * y[i]\nend\n";
      fc.outputs = {"s"};
      break;
    }
    case 1: {  // elementwise combination into a fresh output
      fc.env.tensors["x"] = random_tensor(rng, "x", rand_vec_format(rng), {n}, density);
      fc.env.tensors["y"] = random_tensor(rng, "y", rand_vec_format(rng), {n}, density);
      fc.env.tensors["z"] = make_tensor("z", rand_out_vec_format(rng));
      const char* op = pick(rng, 0, 1) ? "+" : "*";
      fc.source = std::string("z .= 0\nfor i = _\n  z[i] = x[i] ") + op + " y[i]\nend\n";
      fc.outputs = {"z"};
      break;
    }
    case 2: {  // masked matrix reduction
      fc.env.tensors["A"] = random_tensor(rng, "A", rand_mat_format(rng), {n, m}, density);
      fc.env.tensors["s"] = make_tensor("s", "Element(0.0)");
      const char* cmps[] = {"<=", "<", ">=", ">", "==", "!="};
      std::string cmp = cmps[pick(rng, 0, 5)];
      fc.source = "s .= 0.0\nfor j = _\n  for i = _\n    if i " + cmp +
                  " j\n      s[] += A[i, j]\n    end\n  end\nend\n";
      fc.outputs = {"s"};
      break;
    }
    case 3: {  // spmv with a random matrix format
      fc.env.tensors["A"] = random_tensor(rng, "A", rand_mat_format(rng), {n, m}, density);
      fc.env.tensors["x"] = random_tensor(rng, "x", rand_vec_format(rng), {m}, density);
      fc.env.tensors["y"] = make_tensor("y", rand_out_vec_format(rng));
      fc.source = "y .= 0\nfor j = _, i = _\n  y[i] += A[i, j] * x[j]\nend\n";
      fc.outputs = {"y"};
      break;
    }
    case 4: {  // shifted stencil with permissive bounds
      fc.env.tensors["x"] = random_tensor(rng, "x", rand_vec_format(rng), {n}, density);
      fc.env.tensors["z"] = make_tensor("z", rand_out_vec_format(rng));
      fc.source =
          "z .= 0\nfor i = _\n  z[i] = coalesce(x[~(i - 1)], 0.0) + x[i] + "
          "coalesce(x[~(i + 1)], 0.0)\nend\n";
      fc.outputs = {"z"};
      break;
    }
    case 5: {  // matrix transpose-style copy with discordant access
      fc.env.tensors["A"] = random_tensor(rng, "A", rand_mat_format(rng), {n, m}, density);
      fc.env.tensors["B"] = make_tensor("B", rand_out_mat_format(rng));
      fc.source = "B .= 0\nfor i = _\n  for j = _\n    B[j, i] = A[i, j]\n  end\nend\n";
      fc.outputs = {"B"};
      break;
    }
    default: {  // matrix-matrix with a scattered workspace
      fc.env.tensors["A"] = random_tensor(rng, "A", rand_mat_format(rng), {n, m}, density);
      fc.env.tensors["B"] = random_tensor(rng, "B", rand_mat_format(rng), {m, n}, density);
      fc.env.tensors["C"] = make_tensor("C", rand_out_mat_format(rng));
      fc.source =
          "C .= 0\nfor j = _\n  for k = _\n    for i = _\n      C[i, j] += A[i, k] * B[k, "
          "j]\n    end\n  end\nend\n";
      fc.outputs = {"C"};
      break;
    }
  }
  return fc;
}

// Runs one fuzz case against the reference interpreter; returns an error
// message or empty on agreement.
inline std::string check_fuzz_case(FuzzCase& fc) {
  std::map<std::string, TensorPtr> want;
  {
    ProgramEnv ref_env = fc.env;
    want = reference_eval(fc.source, ref_env);
  }
  RunResult got = run_program(fc.source, fc.env);
  for (auto& name : fc.outputs) {
    if (!want.count(name)) return "reference produced no output " + name;
    if (!got.outputs.count(name)) return "run produced no output " + name;
    if (!tensors_value_equal(*want[name], *got.outputs[name], 1e-12))
      return "outputs disagree on " + name + "\nprogram:\n" + fc.source;
    got.outputs[name]->validate();
  }
  return "";
}

}  // namespace gen
}  // namespace finch
