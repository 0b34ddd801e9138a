#pragma once

#include <cstddef>
#include <vector>

#include "scope/core/matrix.hpp"

namespace scope::tpn {

// Simplex ETF Gram target (K/(K-1)) I - (1/(K-1)) 11^T. Throws for K < 2.
Matrix etf_target(std::size_t num_classes);

// Gram matrix of the column-normalised head, W~^T W~ (K x K).
Matrix normalized_gram(const Matrix& head);

struct EtfLossGrad {
  double loss = 0.0;
  Matrix grad;  // same shape as the head (d x K)
};

// loss = ||W~^T W~ - target||_F^2 with w~_k = w_k / ||w_k||, differentiated
// through the column normalisation. Throws NumericError on a zero column.
EtfLossGrad etf_loss_and_grad(const Matrix& head);

// Gradient descent on L_ETF alone with the columns renormalised after every
// step (the loss is scale-invariant per column). Stops when the loss drops
// below tol. Used to exercise the geometry claim in isolation.
struct EtfDescent {
  Matrix head;
  std::size_t steps = 0;
  double loss = 0.0;
  // Largest pairwise cosine after each step.
  std::vector<double> max_cosine_trace;
};
EtfDescent minimize_etf(Matrix head, std::size_t max_steps, double learning_rate, double tol);

// Off-diagonal cosines of the head columns, row-major over pairs k < k'.
std::vector<double> pairwise_cosines(const Matrix& head);

// Lower bound on the largest pairwise cosine of K unit vectors: -1/(K-1).
double rankin_bound(std::size_t num_classes);

}  // namespace scope::tpn
