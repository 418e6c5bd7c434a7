#include "gradnorm/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace gradnorm {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("Matrix dimensions must be positive, got " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0 || rows.begin()->size() == 0) {
    throw ShapeError("from_rows: empty initializer");
  }
  Matrix m(rows.size(), rows.begin()->size());
  std::size_t r = 0;
  for (const auto& row : rows) {
    if (row.size() != m.cols_) {
      throw ShapeError("from_rows: ragged rows");
    }
    std::copy(row.begin(), row.end(), m.row(r).begin());
    ++r;
  }
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  Matrix m(1, values.size());
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double scale) {
  for (double& x : data_) x *= scale;
  return *this;
}

void Matrix::add_scaled(const Matrix& other, double scale) {
  require_same_shape(*this, other, "add_scaled");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double scale) { return a *= scale; }

namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 8;

// c[m×n] = a·b where a(i, p) = a_data[i * a_row + p * a_col] and b is k×n row-major.
// Every output entry accumulates over p in increasing order, so results do not
// depend on the blocking.
void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a_data, std::size_t a_row,
          std::size_t a_col, const double* b, double* c) {
  auto a = [&](std::size_t i, std::size_t p) { return a_data[i * a_row + p * a_col]; };
  // Row panel of a packed as panel[p * kRowBlock + r].
  std::vector<double> panel(k * kRowBlock);
  std::size_t i0 = 0;
  for (; i0 + kRowBlock <= m; i0 += kRowBlock) {
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t r = 0; r < kRowBlock; ++r) panel[p * kRowBlock + r] = a(i0 + r, p);
    }
    const double* pa = panel.data();
    std::size_t j0 = 0;
    for (; j0 + kColBlock <= n; j0 += kColBlock) {
      double acc[kRowBlock][kColBlock] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n + j0;
        const double* ap = pa + p * kRowBlock;
        for (std::size_t r = 0; r < kRowBlock; ++r) {
          for (std::size_t j = 0; j < kColBlock; ++j) acc[r][j] += ap[r] * brow[j];
        }
      }
      for (std::size_t r = 0; r < kRowBlock; ++r) {
        for (std::size_t j = 0; j < kColBlock; ++j) c[(i0 + r) * n + j0 + j] = acc[r][j];
      }
    }
    if (j0 < n) {
      const std::size_t rest = n - j0;
      double acc[kRowBlock][kColBlock] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n + j0;
        const double* ap = pa + p * kRowBlock;
        for (std::size_t r = 0; r < kRowBlock; ++r) {
          for (std::size_t j = 0; j < rest; ++j) acc[r][j] += ap[r] * brow[j];
        }
      }
      for (std::size_t r = 0; r < kRowBlock; ++r) {
        for (std::size_t j = 0; j < rest; ++j) c[(i0 + r) * n + j0 + j] = acc[r][j];
      }
    }
  }
  for (; i0 < m; ++i0) {
    double* crow = c + i0 * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i0, p);
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  gemm(a.rows(), a.cols(), b.cols(), a.data().data(), a.cols(), 1, b.data().data(),
       out.data().data());
  return out;
}

Matrix matmul_transpose_a(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_transpose_a: " + a.shape_string() + "^T x " + b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  gemm(a.cols(), a.rows(), b.cols(), a.data().data(), 1, a.cols(), b.data().data(),
       out.data().data());
  return out;
}

Matrix matmul_transpose_b(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transpose_b: " + a.shape_string() + " x " + b.shape_string() +
                     "^T");
  }
  return matmul(a, transpose(b));
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

void add_row_broadcast(Matrix& m, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw ShapeError("add_row_broadcast: " + row.shape_string() + " onto " + m.shape_string());
  }
  const auto rv = row.row(0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto mr = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) mr[c] += rv[c];
  }
}

Matrix column_sums(const Matrix& m) {
  Matrix out(1, m.cols());
  auto acc = out.row(0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto mr = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) acc[c] += mr[c];
  }
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a;
  auto od = out.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return out;
}

double l2_norm(const Matrix& m) {
  double acc = 0.0;
  for (double x : m.data()) acc += x * x;
  return std::sqrt(acc);
}

double sum(const Matrix& m) {
  double acc = 0.0;
  for (double x : m.data()) acc += x;
  return acc;
}

Matrix map_elementwise(const Matrix& m, Elementwise f) {
  Matrix out = m;
  auto d = out.data();
  switch (f) {
    case Elementwise::tanh:
      for (double& x : d) x = std::tanh(x);
      break;
    case Elementwise::relu:
      for (double& x : d) x = x > 0.0 ? x : 0.0;
      break;
    case Elementwise::relu_derivative:
      for (double& x : d) x = x > 0.0 ? 1.0 : 0.0;
      break;
  }
  return out;
}

}  // namespace gradnorm
