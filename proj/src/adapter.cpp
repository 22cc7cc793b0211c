#include "reprompt/adapter.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "reprompt/ops.hpp"

namespace reprompt {

AdapterState AdapterState::init(const RetrievalDatabase& db, double tau, double lambda,
                                bool keys_frozen, std::size_t top_k) {
  if (tau <= 0.0) throw std::invalid_argument("adapter: tau must be > 0");
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("adapter: lambda must lie in [0, 1]");
  AdapterState a;
  a.cache_keys = db.keys();
  a.label_onehot = Tensor({db.size(), db.meta().class_count});
  for (std::size_t i = 0; i < db.size(); ++i) {
    a.label_onehot[i * db.meta().class_count + db.label(i)] = 1.0;
  }
  a.tau = tau;
  a.lambda = lambda;
  a.keys_frozen = keys_frozen;
  a.top_k = top_k;
  if (!keys_frozen) a.cache_keys.set_requires_grad(true);
  return a;
}

Tape::NodeId knn_probability(Tape& tape, AdapterState& adapter, Tape::NodeId z_hat_q) {
  if (adapter.entries() == 0) throw std::invalid_argument("knn_probability: empty adapter");
  const Tensor& z = tape.value(z_hat_q);
  if (z.rank() != 1 || z.size() != adapter.cache_keys.extent(1)) {
    throw std::invalid_argument("knn_probability: dimension mismatch");
  }
  Tape::NodeId keys = adapter.keys_frozen ? tape.constant_view(adapter.cache_keys)
                                          : tape.leaf(adapter.cache_keys);
  Tape::NodeId onehot = tape.constant_view(adapter.label_onehot);
  if (adapter.top_k > 0 && adapter.top_k < adapter.entries()) {
    // Restrict aggregation to the currently most similar keys; the selection
    // itself is discrete and carries no gradient.
    Tensor sims = ops::matmul(adapter.cache_keys, z);
    std::vector<std::size_t> order(adapter.entries());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(adapter.top_k),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        if (sims[a] != sims[b]) return sims[a] > sims[b];
                        return a < b;
                      });
    order.resize(adapter.top_k);
    keys = tape.gather_rows(keys, order);
    onehot = tape.gather_rows(onehot, order);
  }
  Tape::NodeId scaled = tape.scale(tape.matmul(keys, z_hat_q), adapter.tau);
  Tape::NodeId weights = tape.softmax_rows(scaled);
  return tape.matmul(tape.transpose(onehot), weights);
}

Tensor knn_probability(AdapterState& adapter, const Tensor& z_hat_q) {
  Tape tape;
  return tape.value(knn_probability(tape, adapter, tape.constant(z_hat_q)));
}

Tape::NodeId interpolate(Tape& tape, Tape::NodeId p_knn, Tape::NodeId p_p, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("interpolate: lambda must lie in [0, 1]");
  if (!tape.value(p_knn).same_shape(tape.value(p_p))) {
    throw std::invalid_argument("interpolate: distribution size mismatch");
  }
  return tape.add(tape.scale(p_knn, lambda), tape.scale(p_p, 1.0 - lambda));
}

Tensor interpolate(const Tensor& p_knn, const Tensor& p_p, double lambda) {
  Tape tape;
  return tape.value(interpolate(tape, tape.constant(p_knn), tape.constant(p_p), lambda));
}

}  // namespace reprompt
