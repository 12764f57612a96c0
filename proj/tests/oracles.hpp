#pragma once

// Independent brute-force oracles used by the unit and acceptance suites.
// These are deliberately written with plain loops against the paper-style
// formulas and share no code with the tape/graph implementation they check.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "vlp/datagen.hpp"
#include "vlp/losses.hpp"

namespace vlp::oracle {

inline double cosine(const double* a, const double* b, int64_t d) {
  double dot = 0, na = 0, nb = 0;
  for (int64_t k = 0; k < d; ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// L = -1/(2B) sum_i log(e^{s_ii/tau} / sum_j e^{s_ij/tau})
//     -1/(2B) sum_i log(e^{s_ii/tau} / sum_j e^{s_ji/tau})
inline double itc(const EmbeddingMatrix& I, const EmbeddingMatrix& T, double tau) {
  int64_t b = I.rows, d = I.cols;
  std::vector<double> s(b * b);
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < b; ++j) s[i * b + j] = cosine(I.row(i), T.row(j), d) / tau;
  double loss = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    double den_row = 0.0, den_col = 0.0;
    for (int64_t j = 0; j < b; ++j) {
      den_row += std::exp(s[i * b + j]);
      den_col += std::exp(s[j * b + i]);
    }
    loss += -std::log(std::exp(s[i * b + i]) / den_row);
    loss += -std::log(std::exp(s[i * b + i]) / den_col);
  }
  return loss / (2.0 * static_cast<double>(b));
}

// identical index structure with the two augmented views
inline double i2i(const EmbeddingMatrix& A, const EmbeddingMatrix& B, double tau) {
  return itc(A, B, tau);
}

// SimCLR-style 2B-1 denominator (same-view negatives included); used only to
// pin that the implementation follows the printed two-view equation instead
inline double i2i_simclr_2b1(const EmbeddingMatrix& A, const EmbeddingMatrix& B, double tau) {
  int64_t b = A.rows, d = A.cols;
  auto view = [&](int64_t i) { return i < b ? A.row(i) : B.row(i - b); };
  double loss = 0.0;
  for (int64_t i = 0; i < 2 * b; ++i) {
    int64_t pos = i < b ? i + b : i - b;
    double den = 0.0;
    for (int64_t j = 0; j < 2 * b; ++j) {
      if (j == i) continue;
      den += std::exp(cosine(view(i), view(j), d) / tau);
    }
    loss += -std::log(std::exp(cosine(view(i), view(pos), d) / tau) / den);
  }
  return loss / (2.0 * static_cast<double>(b));
}

inline double mlm(const std::vector<double>& logits, int64_t b, int64_t l, int64_t v,
                  const std::vector<int>& targets, const std::vector<uint8_t>& mask) {
  double loss = 0.0;
  int64_t count = 0;
  for (int64_t r = 0; r < b * l; ++r) {
    if (!mask[r]) continue;
    double den = 0.0;
    for (int64_t k = 0; k < v; ++k) den += std::exp(logits[r * v + k]);
    loss += -std::log(std::exp(logits[r * v + targets[r]]) / den);
    ++count;
  }
  if (count == 0) throw std::runtime_error("oracle mlm: no masked positions");
  return loss / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// rule-based attribute decoder (datagen ground-truth recovery)
// ---------------------------------------------------------------------------

struct DecodedAttributes {
  int intensity = -1;
  int shape = -1;
  int position = -1;
};

inline DecodedAttributes decode_attributes(const std::vector<double>& image, int channels, int h,
                                           int w,
                                           const std::array<IntensityBandRange, 3>& bands) {
  DecodedAttributes out;
  int64_t hw = static_cast<int64_t>(h) * w;
  double sum = 0.0, sx = 0.0, sy = 0.0;
  int64_t count = 0;
  int min_x = w, max_x = -1, min_y = h, max_y = -1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = image[y * static_cast<int64_t>(w) + x];  // channel 0
      if (v <= 0.05) continue;
      sum += v;
      sx += x;
      sy += y;
      ++count;
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
  }
  (void)channels;
  (void)hw;
  if (count == 0) return out;  // nothing rendered; decode failure
  double mean = sum / static_cast<double>(count);
  for (int bnd = 0; bnd < 3; ++bnd)
    if (mean >= bands[bnd].lo && mean <= bands[bnd].hi) out.intensity = bnd;

  double cx = sx / count, cy = sy / count;
  double dx = cx / w - 0.5, dy = cy / h - 0.5;
  if (std::fabs(dy) >= std::fabs(dx))
    out.position = dy < 0 ? 0 : 1;  // upper : lower
  else
    out.position = dx < 0 ? 2 : 3;  // left : right

  double bw = max_x - min_x + 1, bh = max_y - min_y + 1;
  double aspect = std::max(bw, bh) / std::min(bw, bh);
  double fill = static_cast<double>(count) / (bw * bh);
  if (aspect >= 2.0)
    out.shape = 2;  // bar
  else if (fill >= 0.9)
    out.shape = 1;  // square
  else
    out.shape = 0;  // circle
  return out;
}

// ---------------------------------------------------------------------------
// exhaustive-sort retrieval oracle
// ---------------------------------------------------------------------------

// hit@k for query qi over gallery with tie-break by lower index
inline bool recall_hit(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery, int64_t qi,
                       int k) {
  int64_t n = gallery.rows;
  std::vector<std::pair<double, int64_t>> ranked(n);
  for (int64_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (int64_t d = 0; d < queries.cols; ++d) s += queries.row(qi)[d] * gallery.row(j)[d];
    ranked[j] = {s, j};
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int r = 0; r < k; ++r)
    if (ranked[r].second == qi) return true;
  return false;
}

inline double recall_at_k(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery, int k) {
  int64_t hits = 0;
  for (int64_t i = 0; i < queries.rows; ++i) hits += recall_hit(queries, gallery, i, k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(queries.rows);
}

inline EmbeddingMatrix random_unit_embeddings(int64_t rows, int64_t cols, Rng& rng) {
  EmbeddingMatrix m(rows, cols);
  for (int64_t i = 0; i < rows; ++i) {
    double n2 = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      m.row(i)[j] = rng.normal();
      n2 += m.row(i)[j] * m.row(i)[j];
    }
    double inv = 1.0 / std::sqrt(n2);
    for (int64_t j = 0; j < cols; ++j) m.row(i)[j] *= inv;
  }
  return m;
}

}  // namespace vlp::oracle
