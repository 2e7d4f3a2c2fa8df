#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <mutex>
#include <span>
#include <stdexcept>

namespace mfbalance::detail {

// FFTW planning is not thread-safe; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// In-place complex DFT over an FFTW-owned buffer. Buffers come from
/// fftw_malloc so alignment (and hence the chosen codelets) is stable
/// from run to run.
class ComplexFft {
 public:
  ComplexFft(std::size_t n, int sign) : n_(n) {
    buf_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    if (buf_ == nullptr) throw std::bad_alloc();
    std::scoped_lock lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, sign, FFTW_ESTIMATE);
    if (plan_ == nullptr) {
      fftw_free(buf_);
      throw std::runtime_error("fftw: plan creation failed");
    }
  }

  ComplexFft(const ComplexFft&) = delete;
  ComplexFft& operator=(const ComplexFft&) = delete;

  ~ComplexFft() {
    {
      std::scoped_lock lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(buf_);
  }

  std::span<std::complex<double>> data() noexcept {
    return {reinterpret_cast<std::complex<double>*>(buf_), n_};
  }

  void execute() noexcept { fftw_execute(plan_); }

 private:
  std::size_t n_;
  fftw_complex* buf_ = nullptr;
  fftw_plan plan_ = nullptr;
};

inline bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace mfbalance::detail
