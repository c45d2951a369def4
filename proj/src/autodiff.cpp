#include "stlgsl/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "stlgsl/error.hpp"

namespace stlgsl::ad {

const Tensor& Var::value() const {
  if (!tape_) throw ConfigError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

bool GradSink::wants(std::size_t slot) const {
  return tape_.records_[inputs_[slot]].requires_grad;
}

Tensor& GradSink::grad(std::size_t slot) {
  const std::size_t id = inputs_[slot];
  if (!present_[id]) {
    grads_[id] = Tensor(tape_.records_[id].value.shape());
    present_[id] = 1;
  }
  return grads_[id];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  records_.push_back(Record{"leaf", std::move(value), {}, {}, requires_grad, true});
  return Var(this, records_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Record rec{op, std::move(value), {}, {}, false, false};
  rec.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ConfigError(std::string(op) + ": input from a different tape");
    rec.inputs.push_back(in.id());
    rec.requires_grad = rec.requires_grad || records_[in.id()].requires_grad;
  }
  round_to_precision(rec.value.values());
  if (rec.requires_grad) rec.backward = std::move(backward);
  records_.push_back(std::move(rec));
  return Var(this, records_.size() - 1);
}

GradientMap Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ConfigError("backward: loss belongs to a different tape");
  const Record& root = records_[loss.id()];
  if (root.value.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " +
                         shape_str(root.value.shape()));
  }
  if (!root.requires_grad) {
    throw ConfigError("backward: loss is detached from every differentiable leaf");
  }

  std::vector<Tensor> grads(records_.size());
  std::vector<char> present(records_.size(), 0);
  grads[loss.id()] = Tensor(root.value.shape(), 1.0);
  present[loss.id()] = 1;

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Record& rec = records_[i];
    if (!present[i] || rec.leaf || !rec.backward) continue;
    GradSink sink(*this, rec.inputs, grads, present);
    rec.backward(grads[i], sink);
    grads[i] = Tensor();
    present[i] = 0;
  }

  GradientMap out;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const Record& rec = records_[i];
    if (!rec.leaf || !rec.requires_grad) continue;
    out.emplace(i, present[i] ? std::move(grads[i]) : Tensor(rec.value.shape()));
  }
  return out;
}

namespace {

double evaluate_scalar(const std::function<Var(Tape&, std::span<const Var>)>& f,
                       std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).value().item();
}

}  // namespace

double grad_check_many(const std::function<Var(Tape&, std::span<const Var>)>& f,
                       std::span<const Tensor> inputs, double eps) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t, true));
    const Var loss = f(tape, vars);
    if (loss.requires_grad()) {
      GradientMap grads = tape.backward(loss);
      for (const Var& v : vars) analytic.push_back(std::move(grads.at(v.id())));
    } else {
      for (const Tensor& t : inputs) analytic.emplace_back(t.shape());
    }
  }

  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  double worst = 0.0;
  bool saw_nan = false;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double x0 = probe[k][i];
      probe[k][i] = x0 + eps;
      const double up = evaluate_scalar(f, probe);
      probe[k][i] = x0 - eps;
      const double down = evaluate_scalar(f, probe);
      probe[k][i] = x0;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      if (std::isnan(err)) saw_nan = true;
      else worst = std::max(worst, err);
    }
  }
  return saw_nan ? std::nan("") : worst;
}

double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x, double eps) {
  const Tensor inputs[] = {x};
  return grad_check_many([&](Tape& tape, std::span<const Var> v) { return f(tape, v[0]); },
                         inputs, eps);
}

}  // namespace stlgsl::ad
