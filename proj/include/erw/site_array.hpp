// Dense array keyed by a signed site index, grown amortized in both
// directions. This is the hot-path storage for per-site walk and
// environment bookkeeping.
#pragma once

#include <cstdint>
#include <vector>

namespace erw {

using Site = int64_t;

template <typename T>
class SiteArray {
 public:
  explicit SiteArray(T fill = T{}) : fill_(fill) {}

  T get(Site x) const {
    if (data_.empty() || x < lo_ || x >= lo_ + static_cast<Site>(data_.size()))
      return fill_;
    return data_[static_cast<size_t>(x - lo_)];
  }

  T& ref(Site x) {
    ensure(x);
    return data_[static_cast<size_t>(x - lo_)];
  }

  void set(Site x, T v) { ref(x) = v; }

  bool covers(Site x) const {
    return !data_.empty() && x >= lo_ && x < lo_ + static_cast<Site>(data_.size());
  }

  Site lo() const { return lo_; }
  Site hi() const { return lo_ + static_cast<Site>(data_.size()); }  // exclusive
  bool empty() const { return data_.empty(); }
  T fill_value() const { return fill_; }

 private:
  void ensure(Site x) {
    if (data_.empty()) {
      lo_ = x - 16;
      data_.assign(48, fill_);
      return;
    }
    Site hi = lo_ + static_cast<Site>(data_.size());
    if (x >= lo_ && x < hi) return;
    Site new_lo = lo_, new_hi = hi;
    while (x < new_lo) new_lo -= (new_hi - new_lo);
    while (x >= new_hi) new_hi += (new_hi - new_lo);
    std::vector<T> grown(static_cast<size_t>(new_hi - new_lo), fill_);
    std::copy(data_.begin(), data_.end(), grown.begin() + (lo_ - new_lo));
    data_.swap(grown);
    lo_ = new_lo;
  }

  std::vector<T> data_;
  Site lo_ = 0;
  T fill_;
};

}  // namespace erw
