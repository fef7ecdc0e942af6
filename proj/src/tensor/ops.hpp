// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tensor/tape.hpp"

namespace mtr::ad {

// Elementwise binary ops require identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);

/// [m,k] x [k,n] -> [m,n]
Var matmul(const Var& a, const Var& b);

/// 3x3 convolution, stride 1, zero padding 1.
/// x: [N, Cin, H, W], w: [Cout, Cin, 3, 3] -> [N, Cout, H, W]
Var conv2d(const Var& x, const Var& w);

/// Adds b[c] along axis 1 of a rank >= 2 tensor.
Var bias_add(const Var& x, const Var& b);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var abs(const Var& x);
Var square(const Var& x);
Var clamp(const Var& x, double lo, double hi);

Var log_softmax(const Var& x, std::size_t axis);

/// Selects one entry along `axis` per remaining position. `indices` holds one
/// class index per output element (row-major over the shape with `axis`
/// removed). Used for the negative log-likelihood term.
Var pick(const Var& x, std::size_t axis, std::span<const std::size_t> indices);

/// Flat-index gather into a rank-1 result.
Var gather(const Var& x, std::span<const std::size_t> flat_indices);

Var sum(const Var& x);
Var mean(const Var& x);
Var mean_axis(const Var& x, std::size_t axis);

/// Half-open range [begin, end) along `axis`.
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(const Var& x, Shape shape);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace mtr::ad
