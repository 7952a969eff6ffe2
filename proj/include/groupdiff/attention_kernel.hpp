#pragma once

#include <cstddef>

namespace groupdiff::kernel {

// Single-head attention over S contiguous tokens of width d (row-major S×d
// buffers). `probs` receives the S×S softmax matrix and must not be null.
void attention_forward(std::size_t seq, std::size_t width, const double* q, const double* k,
                       const double* v, double* out, double* probs);

// Gradients w.r.t. q, k, v given dL/d(out). Outputs are overwritten.
void attention_backward(std::size_t seq, std::size_t width, const double* q, const double* k,
                        const double* v, const double* probs, const double* dout, double* dq,
                        double* dk, double* dv);

}  // namespace groupdiff::kernel
