#pragma once

#include <vector>

#include "gprune/tensor.hpp"

namespace gprune::num {

// elementwise / arithmetic
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

/// x: (N,C) or (N,C,H,W); bias: (C)
Tensor add_bias(const Tensor& x, const Tensor& bias);

// linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
/// y = x w^T + b with x (N,in), w (out,in), optional b (out)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// convolution / pooling, NCHW layout
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride_h, int stride_w, int pad_h, int pad_w, int groups);
Tensor maxpool2d(const Tensor& x, int kh, int kw, int sh, int sw, int ph,
                 int pw);
Tensor avgpool2d(const Tensor& x, int kh, int kw, int sh, int sw, int ph,
                 int pw);
/// (N,C,H,W) -> (N,C)
Tensor global_avgpool(const Tensor& x);

// structure
Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor flatten(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor channel_shuffle(const Tensor& x, int groups);

/// concat along axis 0 of 2-D tensors with equal column counts
Tensor vstack(const std::vector<Tensor>& rows);
/// out[i,:] = x[idx[i],:]
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
/// out (num_rows, D); out[idx[i],:] += x[i,:]
Tensor scatter_add_rows(const Tensor& x, const std::vector<int>& idx,
                        int num_rows);
/// out[i,:] = x[i,:] * s[i], s constant
Tensor scale_rows(const Tensor& x, const std::vector<double>& s);

// normalization
Tensor batchnorm_train(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, Tensor running_mean,
                       Tensor running_var, double momentum, double eps);
Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Tensor& mean, const Tensor& var, double eps);

// reductions / losses
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
/// logits (N,K), labels in [0,K); mean negative log-likelihood
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels);

/// C (M,N) += or = A (M,K) * B (K,N)
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate);
/// C (M,N) += A (M,K) * B(N,K)^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate);
/// C (M,N) += A(K,M)^T * B (K,N)
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate);

struct Conv2dDims {
  int out_h = 0;
  int out_w = 0;
};
Conv2dDims conv2d_out_dims(int h, int w, int kh, int kw, int sh, int sw,
                           int ph, int pw);

}  // namespace gprune::num
