#include "magtach/fft.hpp"

#include "magtach/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

namespace magtach::fft {

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
// Plans are created once per (size, direction) and never destroyed.
class PlanCache {
public:
  static PlanCache &instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan forward(std::size_t n) { return get(n, true); }
  fftw_plan backward(std::size_t n) { return get(n, false); }

private:
  fftw_plan get(std::size_t n, bool forward) {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(n, forward);
    if (auto it = plans_.find(key); it != plans_.end()) {
      return it->second;
    }
    const auto bins = n / 2 + 1;
    auto *real = static_cast<double *>(fftw_malloc(sizeof(double) * n));
    auto *cplx = static_cast<fftw_complex *>(fftw_malloc(sizeof(fftw_complex) * bins));
    const int ni = static_cast<int>(n);
    fftw_plan plan = forward ? fftw_plan_dft_r2c_1d(ni, real, cplx, FFTW_ESTIMATE)
                             : fftw_plan_dft_c2r_1d(ni, cplx, real, FFTW_ESTIMATE);
    fftw_free(real);
    fftw_free(cplx);
    if (plan == nullptr) {
      fail(ErrorKind::Pipeline, "FFTW failed to create a plan");
    }
    plans_.emplace(key, plan);
    return plan;
  }

  std::mutex mutex_;
  std::map<std::pair<std::size_t, bool>, fftw_plan> plans_;
};

struct FftwDeleter {
  void operator()(void *p) const noexcept { fftw_free(p); }
};

template <typename T> std::unique_ptr<T[], FftwDeleter> fftw_buffer(std::size_t n) {
  auto *p = static_cast<T *>(fftw_malloc(sizeof(T) * std::max<std::size_t>(n, 1)));
  if (p == nullptr) {
    throw std::bad_alloc();
  }
  return std::unique_ptr<T[], FftwDeleter>(p);
}

} // namespace

std::vector<Complex> rfft(std::span<const double> input, std::size_t nfft) {
  require(nfft > 0, "rfft: transform length must be positive");
  require(input.size() <= nfft, "rfft: input longer than transform length");
  const auto bins = nfft / 2 + 1;
  auto real = fftw_buffer<double>(nfft);
  auto cplx = fftw_buffer<fftw_complex>(bins);
  std::copy(input.begin(), input.end(), real.get());
  std::fill(real.get() + input.size(), real.get() + nfft, 0.0);
  fftw_execute_dft_r2c(PlanCache::instance().forward(nfft), real.get(), cplx.get());
  std::vector<Complex> out(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    out[k] = Complex(cplx[k][0], cplx[k][1]);
  }
  return out;
}

std::vector<double> irfft(std::span<const Complex> bins, std::size_t n) {
  require(n > 0, "irfft: length must be positive");
  require(bins.size() == n / 2 + 1, "irfft: bin count does not match length");
  auto cplx = fftw_buffer<fftw_complex>(bins.size());
  auto real = fftw_buffer<double>(n);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    cplx[k][0] = bins[k].real();
    cplx[k][1] = bins[k].imag();
  }
  // c2r destroys its input; it is a private copy here.
  fftw_execute_dft_c2r(PlanCache::instance().backward(n), cplx.get(), real.get());
  std::vector<double> out(real.get(), real.get() + n);
  const double scale = 1.0 / static_cast<double>(n);
  for (auto &v : out) {
    v *= scale;
  }
  return out;
}

std::vector<double> cross_correlation(std::span<const double> a,
                                      std::span<const double> b,
                                      std::size_t max_lag) {
  const std::size_t len = std::max(a.size(), b.size());
  std::size_t nfft = 1;
  while (nfft < len + max_lag + 1) {
    nfft <<= 1;
  }
  nfft <<= 1;
  auto fa = rfft(a, nfft);
  auto fb = rfft(b, nfft);
  for (std::size_t k = 0; k < fa.size(); ++k) {
    fa[k] *= std::conj(fb[k]);
  }
  const auto circ = irfft(fa, nfft);
  // circ[τ mod nfft] = Σ_t a[t+τ]·b[t]
  std::vector<double> out(2 * max_lag + 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto tau = static_cast<long long>(i) - static_cast<long long>(max_lag);
    const auto idx = tau >= 0 ? static_cast<std::size_t>(tau)
                              : nfft - static_cast<std::size_t>(-tau);
    out[i] = circ[idx];
  }
  return out;
}

} // namespace magtach::fft
