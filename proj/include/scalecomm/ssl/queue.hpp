// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "scalecomm/numcore/graph.hpp"

namespace scalecomm::ssl {

using num::Index;
using num::Matrix;

/// Bounded FIFO of detached target embeddings, used as contrastive negatives.
class MemoryQueue {
 public:
  MemoryQueue(Index capacity, Index dim) : capacity_(capacity), dim_(dim), ring_(capacity, dim) {
    if (capacity < 1) throw DomainError("queue: capacity must be >= 1");
  }

  Index capacity() const { return capacity_; }
  Index dim() const { return dim_; }
  Index size() const { return size_; }
  bool empty() const { return size_ == 0; }

  /// Appends rows in order, evicting the oldest entries past capacity.
  void push(const Matrix& rows) {
    if (rows.cols() != dim_) throw StructuralError("queue: embedding width mismatch");
    for (Index r = 0; r < rows.rows(); ++r) {
      ring_.row(head_) = rows.row(r);
      head_ = (head_ + 1) % capacity_;
      if (size_ < capacity_) ++size_;
    }
  }

  /// Graph values may only enter the queue once detached.
  void push(const num::Var& v) {
    if (v.requires_grad()) {
      throw StructuralError("queue: contract violation, embeddings must be gradient-detached");
    }
    push(v.value());
  }

  /// Entries oldest first.
  Matrix contents() const {
    Matrix out(size_, dim_);
    const Index start = size_ < capacity_ ? 0 : head_;
    for (Index i = 0; i < size_; ++i) out.row(i) = ring_.row((start + i) % capacity_);
    return out;
  }

  void clear() {
    size_ = 0;
    head_ = 0;
  }

 private:
  Index capacity_;
  Index dim_;
  Matrix ring_;
  Index head_ = 0;
  Index size_ = 0;
};

}  // namespace scalecomm::ssl
