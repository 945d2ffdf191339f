#include "civic_lens/nn.hpp"

#include <algorithm>
#include <cmath>

namespace civic_lens::nn {

// ---------------------------------------------------------------- parameters

Parameter& ParameterSet::add(std::string name, Matrix init) {
  if (by_name_.count(name)) throw Error("duplicate parameter " + name, "config");
  params_.push_back(std::make_unique<Parameter>(Parameter{name, std::move(init)}));
  by_name_[name] = params_.back().get();
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error("unknown parameter " + name, "config");
  return *it->second;
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error("unknown parameter " + name, "config");
  return *it->second;
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::vector<Matrix> ParameterSet::snapshot() const {
  std::vector<Matrix> out;
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

void ParameterSet::restore(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) throw Error("snapshot does not match parameter set", "config");
  for (std::size_t i = 0; i < values.size(); ++i) params_[i]->value = values[i];
}

nlohmann::json ParameterSet::to_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& p : params_) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(p->value.size()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) data.push_back(p->value(r, c));
    out[p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", std::move(data)}};
  }
  return out;
}

void ParameterSet::load_json(const nlohmann::json& params) {
  for (auto& p : params_) {
    if (!params.contains(p->name)) throw Error("checkpoint lacks parameter " + p->name, "missing_artifact");
    const auto& entry = params.at(p->name);
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    if (rows != p->value.rows() || cols != p->value.cols())
      throw Error("shape mismatch for parameter " + p->name, "config");
    const auto& data = entry.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw Error("bad data for parameter " + p->name, "parse");
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) p->value(r, c) = data[k++].get<double>();
  }
}

Matrix& GradStore::at(const Parameter& p) {
  auto it = grads_.find(&p);
  if (it == grads_.end()) it = grads_.emplace(&p, Matrix::Zero(p.value.rows(), p.value.cols())).first;
  return it->second;
}

const Matrix* GradStore::find(const Parameter& p) const {
  auto it = grads_.find(&p);
  return it == grads_.end() ? nullptr : &it->second;
}

void GradStore::add(const GradStore& other) {
  for (const auto& [p, g] : other.grads_) at(*p) += g;
}

void GradStore::scale(double factor) {
  for (auto& [p, g] : grads_) g *= factor;
}

double GradStore::squared_norm() const {
  // summed in name order: map iteration follows addresses, which vary between runs
  std::vector<std::pair<const std::string*, const Matrix*>> items;
  for (const auto& [p, g] : grads_) items.emplace_back(&p->name, &g);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return *a.first < *b.first; });
  double s = 0;
  for (const auto& [name, g] : items) s += g->squaredNorm();
  return s;
}

// --------------------------------------------------------------------- graph

const Matrix& Var::value() const { return graph->value(id); }
const Matrix& Var::grad() const { return graph->grad(id); }

const Matrix& Graph::grad(int id) const {
  const auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0 && n.value.size() != 0) throw Error("gradient not available; call backward first", "config");
  return n.grad;
}

Var Graph::push(Matrix value, std::vector<int> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (int p : parents) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(p)].requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(const Parameter& p) {
  const Parameter* ptr = &p;
  nodes_.push_back(Node{p.value, {}, true, [ptr](Graph& g, int self) {
                          if (g.store_) g.store_->at(*ptr) += g.nodes_[static_cast<std::size_t>(self)].grad;
                        }});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::embedding(const Parameter& table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.value.rows()) throw Error("embedding id out of range", "config");
    out.row(static_cast<Eigen::Index>(i)) = table.value.row(ids[i]);
  }
  const Parameter* ptr = &table;
  std::vector<int> rows(ids.begin(), ids.end());
  nodes_.push_back(Node{std::move(out), {}, true, [ptr, rows](Graph& g, int self) {
                          if (!g.store_) return;
                          auto& dst = g.store_->at(*ptr);
                          const auto& grad = g.nodes_[static_cast<std::size_t>(self)].grad;
                          for (std::size_t i = 0; i < rows.size(); ++i)
                            dst.row(rows[i]) += grad.row(static_cast<Eigen::Index>(i));
                        }});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(int id, const Matrix& delta) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.requires_grad) n.grad += delta;
}

void Graph::backward(Var root, GradStore* store) {
  if (root.graph != this) throw Error("variable from another graph", "config");
  if (root.rows() != 1 || root.cols() != 1) throw Error("backward needs a scalar root", "config");
  for (auto& n : nodes_)
    if (n.requires_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  if (!nodes_[static_cast<std::size_t>(root.id)].requires_grad) return;
  nodes_[static_cast<std::size_t>(root.id)].grad(0, 0) = 1.0;
  store_ = store;
  for (int i = root.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
  store_ = nullptr;
}

// ----------------------------------------------------------------------- ops

namespace {

Graph& graph_of(Var a) {
  if (!a.graph) throw Error("uninitialized variable", "config");
  return *a.graph;
}

void same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw Error("variables from different graphs", "config");
}

void check_shape(bool ok, const char* op) {
  if (!ok) throw Error(std::string("shape mismatch in ") + op, "config");
}

}  // namespace

Var matmul(Var a, Var b) {
  same_graph(a, b);
  check_shape(a.cols() == b.rows(), "matmul");
  auto& g = graph_of(a);
  return g.push(a.value() * b.value(), {a.id, b.id}, [a, b](Graph& g, int self) {
    const auto& d = g.grad(self);
    if (g.requires_grad(a.id)) g.accumulate(a.id, d * g.value(b.id).transpose());
    if (g.requires_grad(b.id)) g.accumulate(b.id, g.value(a.id).transpose() * d);
  });
}

Var matmul_nt(Var a, Var b) {
  same_graph(a, b);
  check_shape(a.cols() == b.cols(), "matmul_nt");
  auto& g = graph_of(a);
  return g.push(a.value() * b.value().transpose(), {a.id, b.id}, [a, b](Graph& g, int self) {
    const auto& d = g.grad(self);
    if (g.requires_grad(a.id)) g.accumulate(a.id, d * g.value(b.id));
    if (g.requires_grad(b.id)) g.accumulate(b.id, d.transpose() * g.value(a.id));
  });
}

Var add(Var a, Var b) {
  same_graph(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  auto& g = graph_of(a);
  return g.push(a.value() + b.value(), {a.id, b.id}, [a, b](Graph& g, int self) {
    g.accumulate(a.id, g.grad(self));
    g.accumulate(b.id, g.grad(self));
  });
}

Var add_row(Var a, Var row) {
  same_graph(a, row);
  check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  auto& g = graph_of(a);
  Matrix out = a.value().rowwise() + row.value().row(0);
  return g.push(std::move(out), {a.id, row.id}, [a, row](Graph& g, int self) {
    g.accumulate(a.id, g.grad(self));
    if (g.requires_grad(row.id)) g.accumulate(row.id, g.grad(self).colwise().sum());
  });
}

Var sub(Var a, Var b) {
  same_graph(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  auto& g = graph_of(a);
  return g.push(a.value() - b.value(), {a.id, b.id}, [a, b](Graph& g, int self) {
    g.accumulate(a.id, g.grad(self));
    if (g.requires_grad(b.id)) g.accumulate(b.id, -g.grad(self));
  });
}

Var mul(Var a, Var b) {
  same_graph(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  auto& g = graph_of(a);
  return g.push(a.value().cwiseProduct(b.value()), {a.id, b.id}, [a, b](Graph& g, int self) {
    const auto& d = g.grad(self);
    if (g.requires_grad(a.id)) g.accumulate(a.id, d.cwiseProduct(g.value(b.id)));
    if (g.requires_grad(b.id)) g.accumulate(b.id, d.cwiseProduct(g.value(a.id)));
  });
}

Var scale(Var a, double factor) {
  auto& g = graph_of(a);
  return g.push(a.value() * factor, {a.id}, [a, factor](Graph& g, int self) { g.accumulate(a.id, g.grad(self) * factor); });
}

Var tanh(Var a) {
  auto& g = graph_of(a);
  return g.push(a.value().array().tanh().matrix(), {a.id}, [a](Graph& g, int self) {
    const auto& y = g.value(self);
    g.accumulate(a.id, (g.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

namespace {
inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var a) {
  auto& g = graph_of(a);
  Matrix y = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  return g.push(std::move(y), {a.id}, [a](Graph& g, int self) {
    const auto& y = g.value(self);
    g.accumulate(a.id, (g.grad(self).array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var relu(Var a) {
  auto& g = graph_of(a);
  return g.push(a.value().cwiseMax(0.0), {a.id}, [a](Graph& g, int self) {
    const auto& x = g.value(a.id);
    g.accumulate(a.id, (g.grad(self).array() * (x.array() > 0.0).cast<double>()).matrix());
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  auto& g = graph_of(a);
  Matrix y = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); });
  return g.push(std::move(y), {a.id}, [a](Graph& g, int self) {
    Matrix dx = g.value(a.id).unaryExpr([](double x) {
      const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    });
    g.accumulate(a.id, g.grad(self).cwiseProduct(dx));
  });
}

Var softmax_rows(Var a, const Matrix* mask) {
  auto& g = graph_of(a);
  const auto& x = a.value();
  if (mask) check_shape(mask->rows() == x.rows() && mask->cols() == x.cols(), "softmax_rows");
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (!mask || (*mask)(r, c) != 0.0) hi = std::max(hi, x(r, c));
    if (!std::isfinite(hi)) continue;
    double total = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (!mask || (*mask)(r, c) != 0.0) total += (y(r, c) = std::exp(x(r, c) - hi));
    y.row(r) /= total;
  }
  return g.push(std::move(y), {a.id}, [a](Graph& g, int self) {
    const auto& y = g.value(self);
    const auto& d = g.grad(self);
    Eigen::VectorXd dot = (d.cwiseProduct(y)).rowwise().sum();
    Matrix dx = y.cwiseProduct(d - dot.replicate(1, d.cols()));
    g.accumulate(a.id, dx);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  same_graph(x, gain);
  same_graph(x, bias);
  const Eigen::Index n = x.cols();
  check_shape(gain.rows() == 1 && gain.cols() == n && bias.rows() == 1 && bias.cols() == n, "layer_norm");
  auto& g = graph_of(x);
  const auto& xv = x.value();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  y.rowwise() += bias.value().row(0);
  return g.push(std::move(y), {x.id, gain.id, bias.id}, [x, gain, bias, xhat, inv_std](Graph& g, int self) {
    const auto& d = g.grad(self);
    if (g.requires_grad(gain.id)) g.accumulate(gain.id, d.cwiseProduct(xhat).colwise().sum());
    if (g.requires_grad(bias.id)) g.accumulate(bias.id, d.colwise().sum());
    if (g.requires_grad(x.id)) {
      Matrix dxhat = (d.array().rowwise() * g.value(gain.id).row(0).array()).matrix();
      Matrix dx(d.rows(), d.cols());
      for (Eigen::Index r = 0; r < d.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
      }
      g.accumulate(x.id, dx);
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  check_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
  auto& g = graph_of(a);
  return g.push(a.value().middleCols(start, count), {a.id}, [a, start, count](Graph& g, int self) {
    Matrix dx = Matrix::Zero(g.value(a.id).rows(), g.value(a.id).cols());
    dx.middleCols(start, count) = g.grad(self);
    g.accumulate(a.id, dx);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  check_shape(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows");
  auto& g = graph_of(a);
  return g.push(a.value().middleRows(start, count), {a.id}, [a, start, count](Graph& g, int self) {
    Matrix dx = Matrix::Zero(g.value(a.id).rows(), g.value(a.id).cols());
    dx.middleRows(start, count) = g.grad(self);
    g.accumulate(a.id, dx);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat of nothing", "config");
  auto& g = graph_of(parts[0]);
  Eigen::Index cols = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    same_graph(parts[0], p);
    check_shape(p.rows() == parts[0].rows(), "concat_cols");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Matrix out(parts[0].rows(), cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return g.push(std::move(out), ids, [parts](Graph& g, int self) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      const auto w = g.value(p.id).cols();
      if (g.requires_grad(p.id)) g.accumulate(p.id, g.grad(self).middleCols(at, w));
      at += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat of nothing", "config");
  auto& g = graph_of(parts[0]);
  Eigen::Index rows = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    same_graph(parts[0], p);
    check_shape(p.cols() == parts[0].cols(), "concat_rows");
    rows += p.rows();
    ids.push_back(p.id);
  }
  Matrix out(rows, parts[0].cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return g.push(std::move(out), ids, [parts](Graph& g, int self) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      const auto h = g.value(p.id).rows();
      if (g.requires_grad(p.id)) g.accumulate(p.id, g.grad(self).middleRows(at, h));
      at += h;
    }
  });
}

Var transpose(Var a) {
  auto& g = graph_of(a);
  return g.push(a.value().transpose(), {a.id}, [a](Graph& g, int self) { g.accumulate(a.id, g.grad(self).transpose()); });
}

Var max_rows(Var a) {
  check_shape(a.rows() > 0, "max_rows");
  auto& g = graph_of(a);
  const auto& x = a.value();
  Matrix out(1, x.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()), 0);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < x.rows(); ++r)
      if (x(r, c) > x(best, c)) best = r;
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = x(best, c);
  }
  return g.push(std::move(out), {a.id}, [a, arg](Graph& g, int self) {
    Matrix dx = Matrix::Zero(g.value(a.id).rows(), g.value(a.id).cols());
    for (std::size_t c = 0; c < arg.size(); ++c)
      dx(arg[c], static_cast<Eigen::Index>(c)) = g.grad(self)(0, static_cast<Eigen::Index>(c));
    g.accumulate(a.id, dx);
  });
}

Var mean_rows(Var a) {
  check_shape(a.rows() > 0, "mean_rows");
  auto& g = graph_of(a);
  // rows accumulate in order so the result is reproducible against a plain loop
  const Matrix& v = a.value();
  Matrix out = v.row(0);
  for (Eigen::Index i = 1; i < v.rows(); ++i) out += v.row(i);
  out /= static_cast<double>(v.rows());
  return g.push(std::move(out), {a.id}, [a](Graph& g, int self) {
    const auto rows = g.value(a.id).rows();
    g.accumulate(a.id, g.grad(self).replicate(rows, 1) / static_cast<double>(rows));
  });
}

Var sum(Var a) {
  auto& g = graph_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return g.push(std::move(out), {a.id}, [a](Graph& g, int self) {
    const auto& x = g.value(a.id);
    g.accumulate(a.id, Matrix::Constant(x.rows(), x.cols(), g.grad(self)(0, 0)));
  });
}

Var dropout(Var a, double p, Rng* rng) {
  if (p <= 0.0 || !rng) return a;
  if (p >= 1.0) throw Error("dropout probability must be below 1", "config");
  auto& g = graph_of(a);
  Matrix keep(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - p);
  for (Eigen::Index c = 0; c < keep.cols(); ++c)
    for (Eigen::Index r = 0; r < keep.rows(); ++r) keep(r, c) = rng->bernoulli(p) ? 0.0 : s;
  Matrix out = a.value().cwiseProduct(keep);
  return g.push(std::move(out), {a.id}, [a, keep](Graph& g, int self) { g.accumulate(a.id, g.grad(self).cwiseProduct(keep)); });
}

Var bce_with_logits(Var logit, double target) {
  check_shape(logit.rows() == 1 && logit.cols() == 1, "bce_with_logits");
  auto& g = graph_of(logit);
  const double z = logit.scalar();
  Matrix out(1, 1);
  out(0, 0) = std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
  return g.push(std::move(out), {logit.id}, [logit, z, target](Graph& g, int self) {
    Matrix d(1, 1);
    d(0, 0) = (stable_sigmoid(z) - target) * g.grad(self)(0, 0);
    g.accumulate(logit.id, d);
  });
}

// --------------------------------------------------------------------- init

Matrix xavier_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return uniform(rows, cols, std::sqrt(6.0 / static_cast<double>(rows + cols)), rng);
}

Matrix uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  return m;
}

// --------------------------------------------------------------------- lstm

LstmParams LstmParams::create(ParameterSet& ps, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
                              Rng& rng) {
  LstmParams p;
  p.hidden = hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  p.w_input = &ps.add(prefix + ".w_input", uniform(in, 4 * hidden, bound, rng));
  p.w_hidden = &ps.add(prefix + ".w_hidden", uniform(hidden, 4 * hidden, bound, rng));
  Matrix b = Matrix::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();  // forget gate starts open
  p.bias = &ps.add(prefix + ".bias", std::move(b));
  return p;
}

namespace {

// Per-step activations kept for backpropagation through time.
struct LstmTrace {
  Matrix i, f, gc, o, c, tc, h;  // L x h each, in scan order
};

}  // namespace

Var lstm(Graph& g, Var x, const LstmParams& p, bool reverse) {
  const Eigen::Index h = p.hidden;
  const Eigen::Index L = x.rows();
  check_shape(x.cols() == p.w_input->value.rows(), "lstm");
  Var wi = g.param(*p.w_input);
  Var wh = g.param(*p.w_hidden);
  Var b = g.param(*p.bias);

  Matrix pre = x.value() * wi.value();
  pre.rowwise() += b.value().row(0);
  const Matrix& whv = wh.value();

  auto trace = std::make_shared<LstmTrace>();
  for (Matrix* m : {&trace->i, &trace->f, &trace->gc, &trace->o, &trace->c, &trace->tc, &trace->h}) m->resize(L, h);
  Eigen::RowVectorXd hp = Eigen::RowVectorXd::Zero(h), cp = Eigen::RowVectorXd::Zero(h);
  for (Eigen::Index s = 0; s < L; ++s) {
    const Eigen::Index t = reverse ? L - 1 - s : s;
    Eigen::RowVectorXd z = pre.row(t) + hp * whv;
    auto sig = [](double v) { return stable_sigmoid(v); };
    Eigen::RowVectorXd ig = z.segment(0, h).unaryExpr(sig);
    Eigen::RowVectorXd fg = z.segment(h, h).unaryExpr(sig);
    Eigen::RowVectorXd gg = z.segment(2 * h, h).array().tanh();
    Eigen::RowVectorXd og = z.segment(3 * h, h).unaryExpr(sig);
    cp = fg.cwiseProduct(cp) + ig.cwiseProduct(gg);
    Eigen::RowVectorXd tc = cp.array().tanh();
    hp = og.cwiseProduct(tc);
    trace->i.row(s) = ig;
    trace->f.row(s) = fg;
    trace->gc.row(s) = gg;
    trace->o.row(s) = og;
    trace->c.row(s) = cp;
    trace->tc.row(s) = tc;
    trace->h.row(s) = hp;
  }
  Matrix out(L, h);
  for (Eigen::Index s = 0; s < L; ++s) out.row(reverse ? L - 1 - s : s) = trace->h.row(s);

  return g.push(std::move(out), {x.id, wi.id, wh.id, b.id}, [x, wi, wh, b, trace, reverse, h, L](Graph& g, int self) {
    const auto& d = g.grad(self);
    const Matrix& whv = g.value(wh.id);
    Matrix dz(L, 4 * h);
    Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(h), dc_next = Eigen::RowVectorXd::Zero(h);
    for (Eigen::Index s = L - 1; s >= 0; --s) {
      const Eigen::Index t = reverse ? L - 1 - s : s;
      Eigen::RowVectorXd dh = d.row(t) + dh_next;
      auto ig = trace->i.row(s).array(), fg = trace->f.row(s).array(), gg = trace->gc.row(s).array(),
           og = trace->o.row(s).array(), tc = trace->tc.row(s).array();
      Eigen::RowVectorXd dc = (dh.array() * og * (1.0 - tc.square())).matrix() + dc_next;
      Eigen::RowVectorXd c_prev = s > 0 ? Eigen::RowVectorXd(trace->c.row(s - 1)) : Eigen::RowVectorXd::Zero(h);
      dz.row(t).segment(0, h) = dc.array() * gg * ig * (1.0 - ig);
      dz.row(t).segment(h, h) = dc.array() * c_prev.array() * fg * (1.0 - fg);
      dz.row(t).segment(2 * h, h) = dc.array() * ig * (1.0 - gg.square());
      dz.row(t).segment(3 * h, h) = dh.array() * tc * og * (1.0 - og);
      dc_next = (dc.array() * fg).matrix();
      dh_next = dz.row(t) * whv.transpose();
    }
    if (g.requires_grad(x.id)) g.accumulate(x.id, dz * g.value(wi.id).transpose());
    g.accumulate(wi.id, g.value(x.id).transpose() * dz);
    g.accumulate(b.id, dz.colwise().sum());
    // h_prev for each scan step, laid out by time index
    Matrix hprev = Matrix::Zero(L, h);
    for (Eigen::Index s = 1; s < L; ++s) hprev.row(reverse ? L - 1 - s : s) = trace->h.row(s - 1);
    g.accumulate(wh.id, hprev.transpose() * dz);
  });
}

// ---------------------------------------------------------------- attention

AttentionParams AttentionParams::create(ParameterSet& ps, const std::string& prefix, Eigen::Index in, Eigen::Index dim,
                                        Rng& rng) {
  AttentionParams p;
  p.w = &ps.add(prefix + ".w", xavier_uniform(in, dim, rng));
  p.b = &ps.add(prefix + ".b", Matrix::Zero(1, dim));
  p.v = &ps.add(prefix + ".v", xavier_uniform(dim, 1, rng));
  return p;
}

AttentionOutput additive_attention(Graph& g, Var states, const AttentionParams& p) {
  Var u = tanh(add_row(matmul(states, g.param(*p.w)), g.param(*p.b)));
  Var scores = transpose(matmul(u, g.param(*p.v)));
  Var weights = softmax_rows(scores);
  return {matmul(weights, states), weights};
}

// ---------------------------------------------------------------- optimizer

void Adam::step(ParameterSet& params, GradStore& grads, double lr_scale) { step(params.all(), grads, lr_scale); }

void Adam::step(const std::vector<Parameter*>& params, GradStore& grads, double lr_scale) {
  ++t_;
  if (options_.clip_norm > 0) {
    double sq = 0;
    for (const Parameter* p : params)
      if (const Matrix* g = grads.find(*p)) sq += g->squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > options_.clip_norm) grads.scale(options_.clip_norm / norm);
  }
  const double lr = options_.learning_rate * lr_scale;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (Parameter* p : params) {
    const Matrix* grad = grads.find(*p);
    if (!grad) continue;
    auto it = moments_.find(p);
    if (it == moments_.end())
      it = moments_
               .emplace(p, std::make_pair(Matrix::Zero(p->value.rows(), p->value.cols()),
                                          Matrix::Zero(p->value.rows(), p->value.cols())))
               .first;
    auto& [m, v] = it->second;
    m = options_.beta1 * m + (1.0 - options_.beta1) * *grad;
    v = options_.beta2 * v + (1.0 - options_.beta2) * grad->cwiseProduct(*grad);
    if (options_.weight_decay > 0 && p->value.rows() > 1) p->value *= 1.0 - lr * options_.weight_decay;
    p->value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options_.eps);
  }
}

double linear_schedule(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps) {
  if (total_steps <= 0) return 1.0;
  if (warmup_steps > 0 && step < warmup_steps) return static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const double remaining = static_cast<double>(total_steps - step);
  const double span = static_cast<double>(std::max<std::int64_t>(1, total_steps - warmup_steps));
  return std::clamp(remaining / span, 0.0, 1.0);
}

}  // namespace civic_lens::nn
