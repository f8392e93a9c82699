// Copyright 2026 The SALAD Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "salad/autodiff.hpp"

#include <array>
#include <atomic>
#include <memory>
#include <string>
#include <utility>

#include "salad/error.hpp"
#include "salad/ot_assign.hpp"

namespace salad::ad {

namespace {

std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
Matrix<T> as_row(const Vector<T>& v) {
  return v.transpose();
}

}  // namespace

// --- Tape ----------------------------------------------------------------

template <typename T>
Tape<T>::Tape() : id_(next_tape_id()) {}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.tape != id_ || v.index >= nodes_.size()) {
    throw UsageError("autodiff: variable was not recorded on this tape");
  }
  return nodes_[v.index];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  return const_cast<Node&>(std::as_const(*this).node(v));
}

template <typename T>
Var Tape<T>::variable(Mat value) {
  nodes_.push_back({std::move(value), Mat(), nullptr, true});
  return {id_, nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::constant(Mat value) {
  nodes_.push_back({std::move(value), Mat(), nullptr, false});
  return {id_, nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(Mat value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || node(p).requires_grad;
  nodes_.push_back({std::move(value), Mat(), needs ? std::move(backward) : nullptr, needs});
  return {id_, nodes_.size() - 1};
}

template <typename T>
const typename Tape<T>::Mat& Tape<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
void Tape<T>::accumulate(Var v, const Mat& contribution) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (contribution.rows() != n.value.rows() || contribution.cols() != n.value.cols()) {
    throw DimensionError("autodiff: gradient shape mismatch");
  }
  if (n.grad.size() == 0 && n.value.size() != 0) {
    n.grad = contribution;
  } else {
    n.grad += contribution;
  }
}

template <typename T>
void Tape<T>::backward(Var output, const Mat& upstream) {
  const Node& out = node(output);
  if (upstream.rows() != out.value.rows() || upstream.cols() != out.value.cols()) {
    throw DimensionError("autodiff: upstream gradient shape mismatch");
  }
  for (Node& n : nodes_) n.grad = Mat();
  has_grads_ = true;
  accumulate(output, upstream);
  for (std::size_t k = output.index + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.backward || n.grad.size() == 0) continue;
    // Closures only touch earlier nodes; nothing is appended during backward.
    const Mat g = n.grad;
    n.backward(*this, g);
  }
}

template <typename T>
void Tape<T>::backward(Var output) {
  if (node(output).value.size() != 1) throw UsageError("autodiff: backward() without upstream needs a scalar");
  backward(output, Mat::Ones(1, 1));
}

template <typename T>
typename Tape<T>::Mat Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (!has_grads_) throw UsageError("autodiff: gradient requested before backward()");
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

// --- primitive ops -------------------------------------------------------

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  const auto& bv = tape.value(b);
  if (xv.cols() != wv.cols() || bv.rows() != 1 || bv.cols() != wv.rows()) {
    throw DimensionError("linear: shape mismatch");
  }
  Matrix<T> y(xv.rows(), wv.rows());
  y.noalias() = xv * wv.transpose();
  y.rowwise() += bv.row(0);
  const std::array<Var, 3> parents{x, w, b};
  return tape.record(std::move(y), parents, [x, w, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(x)) t.accumulate(x, g * t.value(w));
    if (t.requires_grad(w)) t.accumulate(w, g.transpose() * t.value(x));
    if (t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Matrix<T> y = tape.value(x).cwiseMax(T(0));
  const std::array<Var, 1> parents{x};
  return tape.record(std::move(y), parents, [x](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, (t.value(x).array() > T(0)).select(g, T(0)));
  });
}

template <typename T>
Var multiply(Tape<T>& tape, Var x, Var y) {
  const auto& xv = tape.value(x);
  const auto& yv = tape.value(y);
  if (xv.rows() != yv.rows() || xv.cols() != yv.cols()) throw DimensionError("multiply: shape mismatch");
  Matrix<T> out = xv.cwiseProduct(yv);
  const std::array<Var, 2> parents{x, y};
  return tape.record(std::move(out), parents, [x, y](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(x)) t.accumulate(x, g.cwiseProduct(t.value(y)));
    if (t.requires_grad(y)) t.accumulate(y, g.cwiseProduct(t.value(x)));
  });
}

template <typename T>
Var append_constant_column(Tape<T>& tape, Var scores, Var z) {
  const auto& s = tape.value(scores);
  const auto& zv = tape.value(z);
  if (zv.size() != 1) throw DimensionError("append_constant_column: z must be 1x1");
  Matrix<T> out(s.rows(), s.cols() + 1);
  out.leftCols(s.cols()) = s;
  out.col(s.cols()).setConstant(zv(0, 0));
  const std::array<Var, 2> parents{scores, z};
  return tape.record(std::move(out), parents, [scores, z](Tape<T>& t, const Matrix<T>& g) {
    const Index c = g.cols() - 1;
    if (t.requires_grad(scores)) t.accumulate(scores, g.leftCols(c));
    if (t.requires_grad(z)) t.accumulate(z, Matrix<T>::Constant(1, 1, g.col(c).sum()));
  });
}

template <typename T>
Var sinkhorn(Tape<T>& tape, Var scores, int iters) {
  const Matrix<T>& s = tape.value(scores);
  auto trace = std::make_shared<salad::detail::SinkhornTrace<T>>(salad::detail::sinkhorn_log(s, iters, true));
  auto plan = std::make_shared<Matrix<T>>(
      salad::detail::plan_from_potentials(s, trace->final_row, trace->col.back()));
  const std::array<Var, 1> parents{scores};
  return tape.record(*plan, parents, [scores, trace, plan](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(scores, salad::detail::sinkhorn_backward(t.value(scores), *trace, *plan, g));
  });
}

template <typename T>
Var drop_last_column(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  if (xv.cols() < 1) throw DimensionError("drop_last_column: no columns");
  Matrix<T> out = xv.leftCols(xv.cols() - 1);
  const std::array<Var, 1> parents{x};
  return tape.record(std::move(out), parents, [x](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> full = Matrix<T>::Zero(g.rows(), g.cols() + 1);
    full.leftCols(g.cols()) = g;
    t.accumulate(x, full);
  });
}

template <typename T>
Var matmul_tn(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.rows() != bv.rows()) throw DimensionError("matmul_tn: row counts differ");
  Matrix<T> out(av.cols(), bv.cols());
  out.noalias() = av.transpose() * bv;
  const std::array<Var, 2> parents{a, b};
  return tape.record(std::move(out), parents, [a, b](Tape<T>& t, const Matrix<T>& g) {
    // out = a^T b: d/da = b g^T, d/db = a g.
    if (t.requires_grad(a)) t.accumulate(a, t.value(b) * g.transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a) * g);
  });
}

template <typename T>
Var concat_flat(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  const Index na = av.size();
  const Index nb = bv.size();
  Matrix<T> out(1, na + nb);
  out.leftCols(na) = Eigen::Map<const Matrix<T>>(av.data(), 1, na);
  out.rightCols(nb) = Eigen::Map<const Matrix<T>>(bv.data(), 1, nb);
  const std::array<Var, 2> parents{a, b};
  return tape.record(std::move(out), parents, [a, b, na, nb](Tape<T>& t, const Matrix<T>& g) {
    const auto& av2 = t.value(a);
    const auto& bv2 = t.value(b);
    if (t.requires_grad(a)) {
      t.accumulate(a, Eigen::Map<const Matrix<T>>(g.data(), av2.rows(), av2.cols()));
    }
    if (t.requires_grad(b)) {
      t.accumulate(b, Eigen::Map<const Matrix<T>>(g.data() + na, bv2.rows(), bv2.cols()));
    }
    (void)nb;
  });
}

template <typename T>
Var normalize(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  const T norm = xv.norm();
  Matrix<T> out = norm > T(0) ? Matrix<T>(xv / norm) : Matrix<T>::Zero(xv.rows(), xv.cols());
  const std::array<Var, 1> parents{x};
  auto y = std::make_shared<Matrix<T>>(out);
  return tape.record(std::move(out), parents, [x, y, norm](Tape<T>& t, const Matrix<T>& g) {
    if (!(norm > T(0))) return;
    // d(x/|x|) = (g - y <y, g>) / |x|.
    const T proj = y->cwiseProduct(g).sum();
    t.accumulate(x, (g - proj * *y) / norm);
  });
}

template <typename T>
Var stack_rows(Tape<T>& tape, std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const Index dim = tape.value(rows.front()).cols();
  Matrix<T> out(static_cast<Index>(rows.size()), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& v = tape.value(rows[r]);
    if (v.rows() != 1 || v.cols() != dim) throw DimensionError("stack_rows: rows must be 1 x D");
    out.row(static_cast<Index>(r)) = v;
  }
  std::vector<Var> owned(rows.begin(), rows.end());
  return tape.record(std::move(out), rows, [owned](Tape<T>& t, const Matrix<T>& g) {
    for (std::size_t r = 0; r < owned.size(); ++r) t.accumulate(owned[r], g.row(static_cast<Index>(r)));
  });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Matrix<T>& weights) {
  const auto& xv = tape.value(x);
  if (xv.rows() != weights.rows() || xv.cols() != weights.cols()) {
    throw DimensionError("weighted_sum: shape mismatch");
  }
  Matrix<T> out = Matrix<T>::Constant(1, 1, xv.cwiseProduct(weights).sum());
  const std::array<Var, 1> parents{x};
  auto w = std::make_shared<Matrix<T>>(weights);
  return tape.record(std::move(out), parents, [x, w](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, g(0, 0) * *w);
  });
}

template <typename T>
Var ms_loss(Tape<T>& tape, Var descriptors, std::span<const int> labels, const LossParams& params) {
  const auto& d = tape.value(descriptors);
  const Matrix<T> similarity = d * d.transpose();
  auto grad_sim = std::make_shared<Matrix<T>>();
  const T loss = ms_loss_from_similarity(similarity, labels, params, grad_sim.get());
  const std::array<Var, 1> parents{descriptors};
  return tape.record(Matrix<T>::Constant(1, 1, loss), parents,
                     [descriptors, grad_sim](Tape<T>& t, const Matrix<T>& g) {
                       // S = D D^T, so dL/dD = (G + G^T) D.
                       const Matrix<T> sym = *grad_sim + grad_sim->transpose();
                       t.accumulate(descriptors, g(0, 0) * (sym * t.value(descriptors)));
                     });
}

// --- model composites ----------------------------------------------------

namespace {

template <typename T>
Mlp2Vars register_mlp(Tape<T>& tape, const Mlp2Weights<T>& mlp) {
  return {tape.variable(mlp.w1), tape.variable(as_row(mlp.b1)), tape.variable(mlp.w2),
          tape.variable(as_row(mlp.b2))};
}

template <typename T>
Mlp2Weights<T> mlp_gradients(const Tape<T>& tape, const Mlp2Vars& vars) {
  return {tape.grad(vars.w1), tape.grad(vars.b1).row(0).transpose(), tape.grad(vars.w2),
          tape.grad(vars.b2).row(0).transpose()};
}

}  // namespace

template <typename T>
WeightVars register_weights(Tape<T>& tape, const AggregatorWeights<T>& weights) {
  WeightVars vars;
  vars.score = register_mlp(tape, weights.score);
  vars.reduction = register_mlp(tape, weights.reduction);
  vars.global = register_mlp(tape, weights.global);
  vars.z = tape.variable(Matrix<T>::Constant(1, 1, weights.z));
  return vars;
}

template <typename T>
AggregatorWeights<T> weight_gradients(const Tape<T>& tape, const WeightVars& vars) {
  AggregatorWeights<T> g;
  g.score = mlp_gradients(tape, vars.score);
  g.reduction = mlp_gradients(tape, vars.reduction);
  g.global = mlp_gradients(tape, vars.global);
  g.z = tape.grad(vars.z)(0, 0);
  return g;
}

template <typename T>
Var mlp2(Tape<T>& tape, Var x, const Mlp2Vars& mlp, const Matrix<T>* hidden_mask) {
  Var h = relu(tape, linear(tape, x, mlp.w1, mlp.b1));
  if (hidden_mask != nullptr) h = multiply(tape, h, tape.constant(*hidden_mask));
  return linear(tape, h, mlp.w2, mlp.b2);
}

template <typename T>
Var forward_full(Tape<T>& tape, const FeatureSet& features, const WeightVars& weights,
                 const AggregatorConfig& config, const TrainingMasks<T>* masks) {
  if (features.dim() != config.d) {
    throw DimensionError("forward_full: token dim " + std::to_string(features.dim()) + " != d " +
                         std::to_string(config.d));
  }
  Var tokens = tape.constant(features.tokens.template cast<T>());
  Var global_token = tape.constant(as_row<T>(features.global_token.template cast<T>()));

  Var scores = append_constant_column(tape, mlp2(tape, tokens, weights.score, masks ? &masks->score : nullptr),
                                      weights.z);
  Var assignment = drop_last_column(tape, sinkhorn(tape, scores, config.sinkhorn_iters));
  Var reduced = mlp2(tape, tokens, weights.reduction, masks ? &masks->reduction : nullptr);
  Var clusters = matmul_tn(tape, assignment, reduced);
  Var global = mlp2(tape, global_token, weights.global);
  Var joined = concat_flat(tape, normalize(tape, global), normalize(tape, clusters));
  if (!(tape.value(joined).norm() > T(0))) {
    throw DegenerateDescriptorError("forward_full: both descriptor blocks are zero");
  }
  return normalize(tape, joined);
}

#define SALAD_INSTANTIATE(T)                                                                       \
  template class Tape<T>;                                                                          \
  template Var linear(Tape<T>&, Var, Var, Var);                                                    \
  template Var relu(Tape<T>&, Var);                                                                \
  template Var multiply(Tape<T>&, Var, Var);                                                       \
  template Var append_constant_column(Tape<T>&, Var, Var);                                         \
  template Var sinkhorn(Tape<T>&, Var, int);                                                       \
  template Var drop_last_column(Tape<T>&, Var);                                                    \
  template Var matmul_tn(Tape<T>&, Var, Var);                                                      \
  template Var concat_flat(Tape<T>&, Var, Var);                                                    \
  template Var normalize(Tape<T>&, Var);                                                           \
  template Var stack_rows(Tape<T>&, std::span<const Var>);                                         \
  template Var weighted_sum(Tape<T>&, Var, const Matrix<T>&);                                      \
  template Var ms_loss(Tape<T>&, Var, std::span<const int>, const LossParams&);                    \
  template WeightVars register_weights(Tape<T>&, const AggregatorWeights<T>&);                     \
  template AggregatorWeights<T> weight_gradients(const Tape<T>&, const WeightVars&);               \
  template Var mlp2(Tape<T>&, Var, const Mlp2Vars&, const Matrix<T>*);                             \
  template Var forward_full(Tape<T>&, const FeatureSet&, const WeightVars&, const AggregatorConfig&, \
                            const TrainingMasks<T>*);

SALAD_INSTANTIATE(float)
SALAD_INSTANTIATE(double)

#undef SALAD_INSTANTIATE

}  // namespace salad::ad
