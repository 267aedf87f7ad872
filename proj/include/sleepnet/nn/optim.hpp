#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "sleepnet/nn/network.hpp"

namespace sleepnet::nn {

template <typename Scalar>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long long step = 0;
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
};

template <typename Scalar>
AdamState<Scalar> make_adam_state(std::span<Matrix<Scalar>* const> params) {
  AdamState<Scalar> state;
  for (const auto* p : params) {
    state.first_moment.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
    state.second_moment.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
  }
  return state;
}

template <typename Scalar>
AdamState<Scalar> make_adam_state(const ConvNet<Scalar>& net) {
  AdamState<Scalar> state;
  for (const auto* p : net.parameters()) {
    state.first_moment.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    state.second_moment.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
  }
  return state;
}

/// Adam with bias correction:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
template <typename Scalar>
void adam_update(std::span<Matrix<Scalar>* const> params, std::span<const Matrix<Scalar>> grads,
                 AdamState<Scalar>& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw data_error("adam: parameter/gradient count mismatch");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (g.rows() != params[i]->rows() || g.cols() != params[i]->cols()) {
      throw data_error("adam: gradient shape mismatch");
    }
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    const auto m_hat = m.array() / static_cast<Scalar>(c1);
    const auto v_hat = v.array() / static_cast<Scalar>(c2);
    params[i]->array() -= static_cast<Scalar>(lr) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(state.epsilon));
  }
}

template <typename Scalar>
void adam_step(ConvNet<Scalar>& net, const typename ConvNet<Scalar>::Grads& grads, AdamState<Scalar>& state,
               double lr) {
  std::vector<Matrix<Scalar>*> values;
  for (auto* p : net.parameters()) values.push_back(&p->value);
  adam_update<Scalar>(values, grads, state, lr);
}

}  // namespace sleepnet::nn
