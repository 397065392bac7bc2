#include "criteria.hpp"

#include <random>

#include "facefusion/embedding_net.hpp"
#include "facefusion/loss_heads.hpp"
#include "facefusion/trainer.hpp"
#include "gradient_oracle.hpp"

namespace facefusion::testing {

namespace {

Matrix gaussian(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Independent scalar losses, built from the forward pieces only.
double cls_loss(const NetParams& net, const ProxyMatrix& p, const Matrix& x, std::span<const ClassId> y,
                const LossConfig& cfg) {
  const Matrix e = forward(net, x).embeddings;
  const auto logits = angular_logits(e, p, y, cfg);
  const Mask mask = dataset_mask(y, p.dataset_of);
  return masked_cross_entropy(logits.logits, y, &mask, p.active).loss;
}

double dom_loss(const NetParams& net, const DomainHeadParams& h, const Matrix& x, std::span<const DatasetId> d) {
  return domain_adaptation_loss(forward(net, x).embeddings, d, h, 0.0).loss;
}

void compare_net(NetParams& net, const NetGrads& g, const std::function<double()>& f, FdCheck& fd,
                 const std::string& tag) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    fd.label = tag + ".W" + std::to_string(l);
    fd_compare(net.layers[l].weight.data(), g.layers[l].weight.data(), net.layers[l].weight.size(), f, fd);
    fd.label = tag + ".b" + std::to_string(l);
    fd_compare(net.layers[l].bias.data(), g.layers[l].bias.data(), net.layers[l].bias.size(), f, fd);
  }
}

NetGrads combine(const NetGrads& a, double ca, const NetGrads& b, double cb) {
  NetGrads out = a;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    out.layers[l].weight = ca * a.layers[l].weight + cb * b.layers[l].weight;
    out.layers[l].bias = ca * a.layers[l].bias + cb * b.layers[l].bias;
  }
  return out;
}

}  // namespace

GradientCheckResult toy_gradient_check(std::uint64_t seed) {
  constexpr int B = 4, C = 6, d = 8, in = 10;
  std::mt19937_64 rng(seed);
  LossConfig cfg;
  cfg.margin = 0.5;
  cfg.scale = 64.0;
  cfg.lambda_da = 0.1;
  const double lambda = cfg.lambda_da;

  NetParams net = init_params(in, {12}, d, seed + 1);
  for (auto& l : net.layers) l.bias = 0.1 * gaussian(static_cast<int>(l.bias.size()), 1, rng).col(0);
  const std::vector<DatasetId> class_ds{0, 0, 0, 1, 1, 1};
  ProxyMatrix proxies = init_proxies(class_ds, d, seed + 2);
  DomainHeadParams head = init_domain_head(d, 2, seed + 3);
  head.bias = 0.1 * gaussian(2, 1, rng).col(0);
  const Matrix x = gaussian(B, in, rng);
  const std::vector<ClassId> y{0, 2, 3, 5};
  const std::vector<DatasetId> ds{0, 0, 1, 1};
  (void)C;

  const Objective on = compute_objective(net, proxies, head, x, y, ds, true, cfg, true);
  const Objective off = compute_objective(net, proxies, head, x, y, ds, true, cfg, false);
  // off carries only L_cls into the net; on adds the reversed domain term.
  // An identity backward would add the same term with the opposite sign.
  const NetGrads identity = combine(off.net, 2.0, on.net, -1.0);

  FdCheck fd;
  auto reversed = [&] { return cls_loss(net, proxies, x, y, cfg) - lambda * dom_loss(net, head, x, ds); };
  auto total = [&] { return cls_loss(net, proxies, x, y, cfg) + lambda * dom_loss(net, head, x, ds); };
  compare_net(net, on.net, reversed, fd, "reversed");
  compare_net(net, identity, total, fd, "identity");
  fd.label = "proxies";
  fd_compare(proxies.proxies.data(), on.proxies.data(), proxies.proxies.size(), total, fd);
  auto head_part = [&] { return lambda * dom_loss(net, head, x, ds); };
  fd.label = "head.W";
  fd_compare(head.weight.data(), on.head.weight.data(), head.weight.size(), head_part, fd);
  fd.label = "head.b";
  fd_compare(head.bias.data(), on.head.bias.data(), head.bias.size(), head_part, fd);
  return {fd.max_rel_error, fd.checked,
          fd.worst_label + " analytic " + std::to_string(fd.worst_analytic) + " numeric " +
              std::to_string(fd.worst_numeric)};
}

IsolationResult proxy_isolation(int n_batches, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  IsolationResult r;
  const LossConfig cfg;
  for (int b = 0; b < n_batches; ++b) {
    std::uniform_int_distribution<int> n_ds(2, 5), per(1, 6), batch(1, 32);
    std::vector<DatasetId> class_ds;
    const int K = n_ds(rng);
    for (int k = 0; k < K; ++k)
      for (int c = per(rng); c > 0; --c) class_ds.push_back(k);
    const int C = static_cast<int>(class_ds.size());
    const int in = 6, d = 8;
    const NetParams net = init_params(in, {10}, d, rng());
    const ProxyMatrix proxies = init_proxies(class_ds, d, rng());
    const DomainHeadParams head = init_domain_head(d, K, rng());
    const int n = batch(rng);
    const Matrix x = gaussian(n, in, rng);
    std::uniform_int_distribution<int> pick(0, C - 1);
    std::vector<ClassId> y;
    std::vector<DatasetId> ds;
    for (int i = 0; i < n; ++i) {
      y.push_back(pick(rng));
      ds.push_back(class_ds[y.back()]);
    }
    const Objective obj = compute_objective(net, proxies, head, x, y, ds, true, cfg, true);
    // Per sample: the logit gradient on every other dataset's column. A proxy's
    // gradient is a sum of these times embeddings, so zero here is zero there.
    const Matrix e = forward(net, x).embeddings;
    const auto logits = angular_logits(e, proxies, y, cfg);
    const Mask mask = dataset_mask(y, proxies.dataset_of);
    const auto ce = masked_cross_entropy(logits.logits, y, &mask, proxies.active);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < C; ++c) {
        if (class_ds[c] == ds[i]) continue;
        ++r.cross_entries;
        if (ce.grad(i, c) != 0.0) ++r.nonzero_entries;
      }
    }
    std::vector<bool> present(K, false);
    for (DatasetId k : ds) present[k] = true;
    for (int c = 0; c < C; ++c) {
      // Batch level: proxies of datasets absent from the batch.
      if (!present[class_ds[c]]) {
        r.cross_entries += d;
        r.nonzero_entries += (obj.proxies.row(c).array() != 0.0).count();
      } else if (obj.proxies.row(c).cwiseAbs().maxCoeff() > 0.0) {
        ++r.own_nonzero_rows;
      }
    }
    ++r.batches;
  }
  return r;
}

}  // namespace facefusion::testing
