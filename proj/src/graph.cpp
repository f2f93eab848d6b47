#include "rescal/graph.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rescal::graph {

using ad::ContractError;
using ad::ShapeError;
using ad::Tensor;

AdjacencyMatrix AdjacencyMatrix::identity(int64_t n) {
  AdjacencyMatrix a;
  a.n = n;
  a.kind = AdjacencyKind::Identity;
  a.weights.assign(static_cast<size_t>(n * n), 0.0f);
  for (int64_t i = 0; i < n; ++i) a.weights[static_cast<size_t>(i * n + i)] = 1.0f;
  return a;
}

ad::Tensor AdjacencyMatrix::as_tensor() const {
  return Tensor::from({n, n}, weights);
}

AdjacencyMatrix build_gaussian_adjacency(const std::vector<double>& distances,
                                         int64_t n, double kappa) {
  if (n <= 0 || static_cast<int64_t>(distances.size()) != n * n) {
    throw ContractError("build_gaussian_adjacency: distances must be a square "
                        "n*n matrix");
  }
  if (kappa < 0.0 || kappa >= 1.0) {
    throw ContractError("build_gaussian_adjacency: kappa must lie in [0,1)");
  }
  for (int64_t i = 0; i < n; ++i) {
    if (distances[static_cast<size_t>(i * n + i)] != 0.0) {
      throw ContractError("build_gaussian_adjacency: diagonal must be zero");
    }
  }

  // Population statistics over every finite entry (diagonal included).
  double sum = 0.0, sum_sq = 0.0;
  int64_t count = 0;
  for (double d : distances) {
    if (std::isinf(d)) continue;
    if (!(d >= 0.0)) {
      throw ContractError("build_gaussian_adjacency: negative or NaN distance");
    }
    sum += d;
    sum_sq += d * d;
    count += 1;
  }
  const double mean = sum / static_cast<double>(count);
  const double var = sum_sq / static_cast<double>(count) - mean * mean;
  const double sigma = std::sqrt(std::max(var, 0.0));

  AdjacencyMatrix a;
  a.n = n;
  a.kind = AdjacencyKind::DistanceKernel;
  a.weights.assign(static_cast<size_t>(n * n), 0.0f);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      if (i == j) {
        a.weights[static_cast<size_t>(i * n + j)] = 1.0f;
        continue;
      }
      const double d = distances[static_cast<size_t>(i * n + j)];
      if (std::isinf(d)) continue;
      double w = 0.0;
      if (sigma > 0.0) {
        w = std::exp(-(d * d) / (sigma * sigma));
      } else if (d == 0.0) {
        w = 1.0;
      }
      if (w < kappa) w = 0.0;
      a.weights[static_cast<size_t>(i * n + j)] = static_cast<float>(w);
    }
  }
  return a;
}

std::pair<Tensor, Tensor> transition_matrices(const AdjacencyMatrix& adj) {
  const int64_t n = adj.n;
  auto normalize_rows = [n](const std::vector<float>& w) {
    std::vector<float> out(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n; ++i) {
      double row_sum = 0.0;
      for (int64_t j = 0; j < n; ++j) row_sum += w[static_cast<size_t>(i * n + j)];
      if (row_sum <= 0.0) {
        throw ContractError("transition_matrices: zero row " +
                            std::to_string(i) + " in adjacency");
      }
      for (int64_t j = 0; j < n; ++j) {
        out[static_cast<size_t>(i * n + j)] =
            static_cast<float>(w[static_cast<size_t>(i * n + j)] / row_sum);
      }
    }
    return out;
  };

  std::vector<float> fwd = normalize_rows(adj.weights);
  std::vector<float> transposed(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      transposed[static_cast<size_t>(j * n + i)] = adj.weights[static_cast<size_t>(i * n + j)];
    }
  }
  std::vector<float> bwd = normalize_rows(transposed);
  return {Tensor::from({n, n}, std::move(fwd)),
          Tensor::from({n, n}, std::move(bwd))};
}

NodeEmbeddings NodeEmbeddings::init(int64_t n, int64_t d, Rng& rng) {
  const float a = std::sqrt(1.0f / static_cast<float>(d));
  auto draw = [&](int64_t count) {
    std::vector<float> v(static_cast<size_t>(count));
    for (auto& x : v) x = rng.uniform(-a, a);
    return v;
  };
  NodeEmbeddings e;
  e.e1 = Tensor::from({n, d}, draw(n * d), true);
  e.e2 = Tensor::from({n, d}, draw(n * d), true);
  return e;
}

ad::Tensor self_adaptive_adjacency(const NodeEmbeddings& emb) {
  if (emb.e1.shape() != emb.e2.shape()) {
    throw ShapeError("self_adaptive_adjacency: embedding shapes differ: " +
                     ad::shape_str(emb.e1.shape()) + " vs " +
                     ad::shape_str(emb.e2.shape()));
  }
  Tensor scores = ad::matmul(emb.e1, ad::transpose(emb.e2, {1, 0}));
  return ad::softmax(ad::relu(scores), 1);
}

ad::Tensor mix_nodes(const ad::Tensor& p, const ad::Tensor& x) {
  if (p.rank() != 2 || p.dim(0) != p.dim(1)) {
    throw ShapeError("mix_nodes: support must be square, got " +
                     ad::shape_str(p.shape()));
  }
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) {
    throw ShapeError("mix_nodes: signal must be [N,C,T] or [B,N,C,T], got " +
                     ad::shape_str(x.shape()));
  }
  const int64_t n = p.dim(0);
  const int64_t node_axis_dim = batched ? x.dim(1) : x.dim(0);
  if (node_axis_dim != n) {
    throw ShapeError("mix_nodes: support " + ad::shape_str(p.shape()) +
                     " does not match signal " + ad::shape_str(x.shape()));
  }
  if (!batched) {
    const int64_t c = x.dim(1), t = x.dim(2);
    Tensor flat = ad::reshape(x, {n, c * t});
    return ad::reshape(ad::matmul(p, flat), {n, c, t});
  }
  const int64_t b = x.dim(0), c = x.dim(2), t = x.dim(3);
  Tensor moved = ad::transpose(x, {1, 0, 2, 3});        // [N,B,C,T]
  Tensor flat = ad::reshape(moved, {n, b * c * t});
  Tensor mixed = ad::reshape(ad::matmul(p, flat), {n, b, c, t});
  return ad::transpose(mixed, {1, 0, 2, 3});
}

ad::Tensor graph_conv(const ad::Tensor& x,
                      const std::vector<ad::Tensor>& supports,
                      const ad::Tensor& w, const ad::Tensor& bias,
                      int diffusion_order) {
  if (diffusion_order < 1) {
    throw ContractError("graph_conv: diffusion order must be >= 1");
  }
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) {
    throw ShapeError("graph_conv: signal must be [N,C,T] or [B,N,C,T], got " +
                     ad::shape_str(x.shape()));
  }
  const int64_t c_in = batched ? x.dim(2) : x.dim(1);
  const int64_t blocks =
      static_cast<int64_t>(supports.size()) * diffusion_order + 1;
  if (w.rank() != 2 || w.dim(1) != c_in * blocks) {
    throw ShapeError("graph_conv: weights " + ad::shape_str(w.shape()) +
                     " want input channels " + std::to_string(c_in * blocks) +
                     " for signal " + ad::shape_str(x.shape()) + " with " +
                     std::to_string(supports.size()) + " supports, K=" +
                     std::to_string(diffusion_order));
  }

  std::vector<Tensor> parts;
  parts.push_back(x);
  for (const Tensor& p : supports) {
    Tensor cur = x;
    for (int k = 0; k < diffusion_order; ++k) {
      cur = mix_nodes(p, cur);
      parts.push_back(cur);
    }
  }
  const int channel_axis = batched ? 2 : 1;
  Tensor cat = ad::concat(parts, channel_axis);

  if (!batched) {
    const int64_t n = x.dim(0), t = x.dim(2);
    Tensor y = ad::pointwise_conv(ad::reshape(cat, {n, c_in * blocks, t}), w,
                                  bias);
    return y;  // [N, Cout, T]
  }
  const int64_t b = x.dim(0), n = x.dim(1), t = x.dim(3);
  Tensor y = ad::pointwise_conv(ad::reshape(cat, {b * n, c_in * blocks, t}), w,
                                bias);
  return ad::reshape(y, {b, n, w.dim(0), t});
}

std::vector<double> load_distance_csv(
    const std::string& path, const std::map<std::string, int64_t>& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("distance csv: cannot open " + path);
  const int64_t n = static_cast<int64_t>(vocab.size());
  std::vector<double> d(static_cast<size_t>(n * n),
                        std::numeric_limits<double>::infinity());
  for (int64_t i = 0; i < n; ++i) d[static_cast<size_t>(i * n + i)] = 0.0;

  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty() || line[0] == '#') continue;
    if (line_no == 1 && line.find("from") != std::string::npos) continue;
    std::istringstream ls(line);
    std::string from, to, dist;
    if (!std::getline(ls, from, ',') || !std::getline(ls, to, ',') ||
        !std::getline(ls, dist)) {
      throw std::runtime_error("distance csv: malformed line " +
                               std::to_string(line_no) + " in " + path);
    }
    auto fi = vocab.find(from);
    auto ti = vocab.find(to);
    if (fi == vocab.end() || ti == vocab.end()) {
      throw std::runtime_error("distance csv: unknown node id at line " +
                               std::to_string(line_no) + " in " + path);
    }
    d[static_cast<size_t>(fi->second * n + ti->second)] = std::stod(dist);
  }
  return d;
}

std::map<std::string, int64_t> load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocab: cannot open " + path);
  std::map<std::string, int64_t> vocab;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id, idx;
    if (!std::getline(ls, id, ',') || !std::getline(ls, idx)) {
      throw std::runtime_error("vocab: malformed line " +
                               std::to_string(line_no) + " in " + path);
    }
    vocab[id] = std::stoll(idx);
  }
  return vocab;
}

void save_vocab(const std::string& path, const std::vector<std::string>& ids) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("vocab: cannot open " + path);
  for (size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << ',' << i << '\n';
  }
}

std::vector<ad::Tensor> dataset_supports(const std::string& dir,
                                         const std::string& adjacency_file,
                                         const std::string& vocab_file,
                                         double kappa) {
  if (adjacency_file.empty()) return {};
  if (vocab_file.empty()) {
    throw std::runtime_error("dataset_supports: adjacency present but no "
                             "vocabulary in " + dir);
  }
  const auto vocab = load_vocab(dir + "/" + vocab_file);
  const auto distances = load_distance_csv(dir + "/" + adjacency_file, vocab);
  const auto adj = build_gaussian_adjacency(
      distances, static_cast<int64_t>(vocab.size()), kappa);
  auto [fwd, bwd] = transition_matrices(adj);
  return {fwd, bwd};
}

void save_distance_csv(const std::string& path,
                       const std::vector<double>& distances, int64_t n,
                       const std::vector<std::string>& ids) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("distance csv: cannot open " + path);
  out << "from,to,distance\n";
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = distances[static_cast<size_t>(i * n + j)];
      if (std::isinf(d)) continue;
      out << ids[static_cast<size_t>(i)] << ',' << ids[static_cast<size_t>(j)]
          << ',' << d << '\n';
    }
  }
}

}  // namespace rescal::graph
