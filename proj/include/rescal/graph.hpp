#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rescal/rng.hpp"
#include "rescal/tensor.hpp"

namespace rescal::graph {

enum class AdjacencyKind { DistanceKernel, SelfAdaptive, Identity };

struct AdjacencyMatrix {
  int64_t n = 0;
  std::vector<float> weights;  // n*n row-major, non-negative
  AdjacencyKind kind = AdjacencyKind::Identity;

  static AdjacencyMatrix identity(int64_t n);
  ad::Tensor as_tensor() const;
};

// Thresholded Gaussian kernel over road distances. distances is a dense n*n
// row-major matrix with +inf marking unconnected pairs and a zero diagonal.
// w[i][j] = exp(-d^2/sigma^2) with sigma the population std of all finite
// distances; entries below kappa are cut to exactly 0; diagonal forced to 1.
AdjacencyMatrix build_gaussian_adjacency(const std::vector<double>& distances,
                                         int64_t n, double kappa);

// Diffusion transition pair: row-normalized adjacency and row-normalized
// transpose. Rows must be nonzero (the kernel adjacency guarantees this via
// its unit diagonal).
std::pair<ad::Tensor, ad::Tensor> transition_matrices(
    const AdjacencyMatrix& adj);

// Learnable node embeddings backing the self-adaptive adjacency.
struct NodeEmbeddings {
  ad::Tensor e1;  // [N, d]
  ad::Tensor e2;  // [N, d]
  static NodeEmbeddings init(int64_t n, int64_t d, Rng& rng);
};

// A = row-wise softmax(relu(e1 * e2^T)); differentiable.
ad::Tensor self_adaptive_adjacency(const NodeEmbeddings& emb);

// Diffusion graph convolution. x: [N,C,T] or [B,N,C,T]; supports: list of
// [N,N] transition matrices; w: [Cout, Cin*(len(supports)*K+1)] pointwise
// weights over the concatenation of x and its diffused copies P^k x.
ad::Tensor graph_conv(const ad::Tensor& x,
                      const std::vector<ad::Tensor>& supports,
                      const ad::Tensor& w, const ad::Tensor& bias,
                      int diffusion_order);

// Node mixing along the node axis: y[...,n,c,t] = sum_m P[n,m] x[...,m,c,t].
ad::Tensor mix_nodes(const ad::Tensor& p, const ad::Tensor& x);

// Distance CSV: lines "from_id,to_id,distance_meters". Unlisted pairs are
// +inf, the diagonal is 0. Vocabulary maps node ids to indices 0..N-1.
std::vector<double> load_distance_csv(const std::string& path,
                                      const std::map<std::string, int64_t>& vocab);

std::map<std::string, int64_t> load_vocab(const std::string& path);
void save_vocab(const std::string& path, const std::vector<std::string>& ids);

// Forward/backward transition matrices from a dataset directory's distance
// CSV and vocabulary; empty when adjacency_file is empty.
std::vector<ad::Tensor> dataset_supports(const std::string& dir,
                                         const std::string& adjacency_file,
                                         const std::string& vocab_file,
                                         double kappa);

void save_distance_csv(const std::string& path,
                       const std::vector<double>& distances, int64_t n,
                       const std::vector<std::string>& ids);

}  // namespace rescal::graph
