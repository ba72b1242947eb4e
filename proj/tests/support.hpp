#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "lifestream/ndgrad.hpp"

namespace support {

using lifestream::nd::Array;
using lifestream::nd::Graph;
using lifestream::nd::Index;
using lifestream::nd::Var;
using Mat = Array<double>;

inline Mat random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// sum(y * w) for a fixed random weight w, so every output entry feeds the
// scalar with a distinct coefficient.
inline Var<double> weighted_sum(const Var<double>& y, const Mat& w) {
  return lifestream::nd::sum(lifestream::nd::mul_elem(y, y.graph().constant(w)));
}

// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(const Mat& a, const Mat& b, double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

using ScalarFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

// Largest per-input relative error between the reverse-mode gradient of
// f(inputs) and central differences with the given step.
inline double gradient_error(const std::vector<Mat>& inputs, const ScalarFn& f, double step = 1e-5) {
  std::vector<Mat> analytic;
  {
    Graph<double> g;
    std::vector<Var<double>> leaves;
    for (const auto& x : inputs) leaves.push_back(g.leaf(x));
    Var<double> loss = f(g, leaves);
    g.backward(loss);
    for (const auto& l : leaves) {
      Mat gr = g.grad(l.id());
      if (gr.size() == 0) gr = Mat::Zero(l.rows(), l.cols());
      analytic.push_back(gr);
    }
  }
  auto eval = [&f](const std::vector<Mat>& xs) {
    Graph<double> g;
    std::vector<Var<double>> leaves;
    for (const auto& x : xs) leaves.push_back(g.leaf(x, false));
    return f(g, leaves).value()(0, 0);
  };
  double worst = 0;
  std::vector<Mat> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Mat numeric(inputs[k].rows(), inputs[k].cols());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = probe[k].data()[i];
      probe[k].data()[i] = orig + step;
      const double up = eval(probe);
      probe[k].data()[i] = orig - step;
      const double down = eval(probe);
      probe[k].data()[i] = orig;
      numeric.data()[i] = (up - down) / (2 * step);
    }
    worst = std::max(worst, relative_error(analytic[k], numeric));
  }
  return worst;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("lifestream_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace support
