#pragma once

#include <cstddef>

#include "reprompt/database.hpp"
#include "reprompt/tape.hpp"
#include "reprompt/tensor.hpp"

namespace reprompt {

/// Differentiable kNN cache classifier over the whole database: class
/// probabilities are label-aggregated softmax weights of tau-scaled key
/// similarities. Keys start as copies of the database keys and are trained
/// with the rest of the model unless frozen.
struct AdapterState {
  Tensor cache_keys;    // |D| x d, learnable unless keys_frozen
  Tensor label_onehot;  // |D| x C, each row sums to exactly 1
  double tau = 16.0;
  double lambda = 0.5;
  bool keys_frozen = false;
  std::size_t top_k = 0;  // 0 = aggregate over the full database

  static AdapterState init(const RetrievalDatabase& db, double tau, double lambda,
                           bool keys_frozen, std::size_t top_k = 0);

  std::size_t entries() const { return label_onehot.extent(0); }
  std::size_t classes() const { return label_onehot.extent(1); }
};

/// p_kNN over classes for a prompt-tuned unit query (Tape form carries
/// gradients into the query and, when not frozen, the cache keys).
Tape::NodeId knn_probability(Tape& tape, AdapterState& adapter, Tape::NodeId z_hat_q);
Tensor knn_probability(AdapterState& adapter, const Tensor& z_hat_q);

/// lambda * p_knn + (1 - lambda) * p_p; lambda must lie in [0, 1].
Tape::NodeId interpolate(Tape& tape, Tape::NodeId p_knn, Tape::NodeId p_p, double lambda);
Tensor interpolate(const Tensor& p_knn, const Tensor& p_p, double lambda);

}  // namespace reprompt
