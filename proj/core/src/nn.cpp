#include "wmark/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace wmark {

const char* arch_name(Arch a) { return a == Arch::cnn2hp ? "cnn2hp" : "cnn2"; }

Arch parse_arch(const std::string& s) {
  if (s == "cnn2") return Arch::cnn2;
  if (s == "cnn2hp") return Arch::cnn2hp;
  throw ValidationError("unknown architecture '" + s + "' (expected cnn2 or cnn2hp)");
}

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Eigen::Map<const RMat<T>> cmap(const std::vector<T>& v, int r, int c) {
  return Eigen::Map<const RMat<T>>(v.data(), r, c);
}

template <typename T>
Eigen::Map<const Vec<T>> vmap(const std::vector<T>& v) {
  return Eigen::Map<const Vec<T>>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// X is C x (B*S*S), column n = (b*S + y)*S + x. Returns (C*9) x (B*S*S).
template <typename T>
Mat<T> im2col(const Mat<T>& X, int B, int S) {
  const int C = static_cast<int>(X.rows());
  const int K = C * 9;
  Mat<T> cols(K, static_cast<Eigen::Index>(B) * S * S);
  const T* xd = X.data();
  T* cd = cols.data();
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        size_t n = (static_cast<size_t>(b) * S + y) * S + x;
        T* out = cd + n * K;
        for (int ky = 0; ky < 3; ++ky) {
          int yy = y + ky - 1;
          for (int kx = 0; kx < 3; ++kx) {
            int xx = x + kx - 1;
            bool in = yy >= 0 && yy < S && xx >= 0 && xx < S;
            const T* src = in ? xd + ((static_cast<size_t>(b) * S + yy) * S + xx) * C : nullptr;
            for (int c = 0; c < C; ++c) out[c * 9 + ky * 3 + kx] = in ? src[c] : T(0);
          }
        }
      }
  return cols;
}

template <typename T>
Mat<T> col2im(const Mat<T>& cols, int C, int B, int S) {
  const int K = C * 9;
  Mat<T> X = Mat<T>::Zero(C, static_cast<Eigen::Index>(B) * S * S);
  T* xd = X.data();
  const T* cd = cols.data();
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        size_t n = (static_cast<size_t>(b) * S + y) * S + x;
        const T* in = cd + n * K;
        for (int ky = 0; ky < 3; ++ky) {
          int yy = y + ky - 1;
          if (yy < 0 || yy >= S) continue;
          for (int kx = 0; kx < 3; ++kx) {
            int xx = x + kx - 1;
            if (xx < 0 || xx >= S) continue;
            T* dst = xd + ((static_cast<size_t>(b) * S + yy) * S + xx) * C;
            for (int c = 0; c < C; ++c) dst[c] += in[c * 9 + ky * 3 + kx];
          }
        }
      }
  return X;
}

template <typename T>
Mat<T> maxpool2(const Mat<T>& A, int B, int S, std::vector<int>& idx) {
  const int C = static_cast<int>(A.rows());
  const int h = S / 2;
  Mat<T> P(C, static_cast<Eigen::Index>(B) * h * h);
  idx.assign(static_cast<size_t>(P.size()), 0);
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < h; ++x) {
        Eigen::Index n2 = (static_cast<Eigen::Index>(b) * h + y) * h + x;
        Eigen::Index base = (static_cast<Eigen::Index>(b) * S + 2 * y) * S + 2 * x;
        const Eigen::Index cand[4] = {base, base + 1, base + S, base + S + 1};
        for (int c = 0; c < C; ++c) {
          Eigen::Index best = cand[0];
          for (int q = 1; q < 4; ++q)
            if (A(c, cand[q]) > A(c, best)) best = cand[q];
          P(c, n2) = A(c, best);
          idx[static_cast<size_t>(n2 * C + c)] = static_cast<int>(best);
        }
      }
  return P;
}

template <typename T>
Mat<T> unpool2(const Mat<T>& dP, const std::vector<int>& idx, Eigen::Index cols_full) {
  const Eigen::Index C = dP.rows();
  Mat<T> dA = Mat<T>::Zero(C, cols_full);
  for (Eigen::Index n2 = 0; n2 < dP.cols(); ++n2)
    for (Eigen::Index c = 0; c < C; ++c) dA(c, idx[static_cast<size_t>(n2 * C + c)]) += dP(c, n2);
  return dA;
}

template <typename T>
struct Cache {
  int B = 0;
  Mat<T> cols1, a1, cols2, a2, flat, h;
  std::vector<int> idx1, idx2;
};

template <typename T>
void relu_inplace(Mat<T>& m) {
  m = m.cwiseMax(T(0));
}

}  // namespace

template <typename T>
std::vector<T> network_input(const ImageU8& img, Arch arch) {
  const int S = img.height, W = img.width;
  const int C = arch == Arch::cnn2hp ? 6 : 3;
  std::vector<T> out(static_cast<size_t>(C) * S * W);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < W; ++x) out[(static_cast<size_t>(c) * S + y) * W + x] = T(img.at(y, x, c) / 255.0);
  if (arch == Arch::cnn2hp) {
    static constexpr double k[3][3] = {{-0.25, 0.5, -0.25}, {0.5, -1.0, 0.5}, {-0.25, 0.5, -0.25}};
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < W; ++x) {
          double s = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= S || xx < 0 || xx >= W) continue;
              s += k[dy + 1][dx + 1] * (img.at(yy, xx, c) / 255.0);
            }
          out[(static_cast<size_t>(c + 3) * S + y) * W + x] = T(s * kResidualGain);
        }
  }
  return out;
}

template std::vector<float> network_input<float>(const ImageU8&, Arch);
template std::vector<double> network_input<double>(const ImageU8&, Arch);

template <typename T>
Net<T>::Net(Arch a, int c, int s) : arch(a), classes(c), side(s) {
  if (classes < 2) throw ValidationError("network needs at least 2 classes");
  if (side < 4 || side % 4 != 0) throw ValidationError("network input side must be a positive multiple of 4");
  const int cin = input_channels();
  const int flat = 32 * (side / 4) * (side / 4);
  auto add = [&](const char* name, std::vector<int> shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    params.push_back({name, std::move(shape), std::vector<T>(n, T(0))});
  };
  add("conv1.weight", {16, cin, 3, 3});
  add("conv1.bias", {16});
  add("conv2.weight", {32, 16, 3, 3});
  add("conv2.bias", {32});
  add("fc1.weight", {kFeatureDim, flat});
  add("fc1.bias", {kFeatureDim});
  add("fc2.weight", {classes, kFeatureDim});
  add("fc2.bias", {classes});
}

template <typename T>
void Net<T>::init_he_uniform(SeededRng& rng) {
  for (auto& p : params) {
    if (p.shape.size() == 1) {
      std::fill(p.data.begin(), p.data.end(), T(0));
      continue;
    }
    size_t fan_in = p.data.size() / static_cast<size_t>(p.shape[0]);
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& w : p.data) w = T(rng.uniform(-bound, bound));
  }
}

template <typename T>
size_t Net<T>::param_count() const {
  size_t n = 0;
  for (const auto& p : params) n += p.data.size();
  return n;
}

template <typename T>
std::string Net<T>::descriptor() const {
  std::ostringstream os;
  os << arch_name(arch) << ";side=" << side << ";classes=" << classes << ";in=" << input_channels()
     << ";conv16-conv32-fc64";
  return os.str();
}

template <typename T>
Grads<T> Net<T>::zero_grads() const {
  Grads<T> g;
  for (const auto& p : params) g.emplace_back(p.data.size(), T(0));
  return g;
}

template <typename T>
typename Net<T>::Pass Net<T>::forward(const std::vector<const ImageU8*>& batch, bool keep_cache) const {
  const int B = static_cast<int>(batch.size());
  const int S = side, S2 = S / 2, S4 = S / 4;
  const int cin = input_channels();
  Pass pass;
  pass.batch = B;
  if (B == 0) return pass;

  Mat<T> X(cin, static_cast<Eigen::Index>(B) * S * S);
  for (int b = 0; b < B; ++b) {
    const ImageU8& img = *batch[b];
    if (img.height != S || img.width != S)
      throw ValidationError("forward: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                            " does not match network input " + std::to_string(S) + "x" + std::to_string(S));
    auto in = network_input<T>(img, arch);
    for (int c = 0; c < cin; ++c)
      for (int s = 0; s < S * S; ++s) X(c, static_cast<Eigen::Index>(b) * S * S + s) = in[static_cast<size_t>(c) * S * S + s];
  }

  auto cache = std::make_shared<Cache<T>>();
  Cache<T>& k = *cache;
  k.B = B;
  k.cols1 = im2col<T>(X, B, S);
  k.a1 = cmap(params[kConv1W].data, 16, cin * 9) * k.cols1;
  k.a1.colwise() += vmap(params[kConv1B].data);
  relu_inplace(k.a1);
  Mat<T> p1 = maxpool2<T>(k.a1, B, S, k.idx1);
  k.cols2 = im2col<T>(p1, B, S2);
  k.a2 = cmap(params[kConv2W].data, 32, 16 * 9) * k.cols2;
  k.a2.colwise() += vmap(params[kConv2B].data);
  relu_inplace(k.a2);
  Mat<T> p2 = maxpool2<T>(k.a2, B, S2, k.idx2);

  const int s3 = S4 * S4;
  const int flat_dim = 32 * s3;
  k.flat.resize(flat_dim, B);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < 32; ++c)
      for (int s = 0; s < s3; ++s) k.flat(c * s3 + s, b) = p2(c, static_cast<Eigen::Index>(b) * s3 + s);

  k.h = cmap(params[kFc1W].data, kFeatureDim, flat_dim) * k.flat;
  k.h.colwise() += vmap(params[kFc1B].data);
  relu_inplace(k.h);
  Mat<T> logits = cmap(params[kFc2W].data, classes, kFeatureDim) * k.h;
  logits.colwise() += vmap(params[kFc2B].data);

  pass.logits.assign(logits.data(), logits.data() + logits.size());
  pass.features.assign(k.h.data(), k.h.data() + k.h.size());
  if (keep_cache) pass.cache = cache;
  return pass;
}

template <typename T>
Grads<T> Net<T>::backward(const Pass& pass, const std::vector<T>& dlogits, const std::vector<T>* dfeatures) const {
  if (!pass.cache) throw std::logic_error("backward needs a forward pass with keep_cache=true");
  const Cache<T>& k = *static_cast<const Cache<T>*>(pass.cache.get());
  const int B = k.B, S = side, S2 = S / 2, S4 = S / 4, s3 = S4 * S4;
  const int cin = input_channels();
  const int flat_dim = 32 * s3;
  if (dlogits.size() != static_cast<size_t>(B) * classes) throw ValidationError("backward: dlogits size mismatch");
  Grads<T> g = zero_grads();
  auto gmap = [&](int i, int r, int c) { return Eigen::Map<RMat<T>>(g[i].data(), r, c); };
  auto gvec = [&](int i) { return Eigen::Map<Vec<T>>(g[i].data(), static_cast<Eigen::Index>(g[i].size())); };

  const Mat<T> dL = Eigen::Map<const Mat<T>>(dlogits.data(), classes, B);
  gmap(kFc2W, classes, kFeatureDim).noalias() = dL * k.h.transpose();
  gvec(kFc2B) = Vec<T>(dL.rowwise().sum());
  Mat<T> dh = cmap(params[kFc2W].data, classes, kFeatureDim).transpose() * dL;
  if (dfeatures) {
    if (dfeatures->size() != static_cast<size_t>(B) * kFeatureDim)
      throw ValidationError("backward: dfeatures size mismatch");
    dh += Eigen::Map<const Mat<T>>(dfeatures->data(), kFeatureDim, B);
  }
  Mat<T> dz = dh.cwiseProduct((k.h.array() > T(0)).template cast<T>().matrix());
  gmap(kFc1W, kFeatureDim, flat_dim).noalias() = dz * k.flat.transpose();
  gvec(kFc1B) = Vec<T>(dz.rowwise().sum());
  Mat<T> dflat = cmap(params[kFc1W].data, kFeatureDim, flat_dim).transpose() * dz;

  Mat<T> dp2(32, static_cast<Eigen::Index>(B) * s3);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < 32; ++c)
      for (int s = 0; s < s3; ++s) dp2(c, static_cast<Eigen::Index>(b) * s3 + s) = dflat(c * s3 + s, b);
  Mat<T> dz2 = unpool2<T>(dp2, k.idx2, k.a2.cols());
  dz2 = dz2.cwiseProduct((k.a2.array() > T(0)).template cast<T>().matrix());
  gmap(kConv2W, 32, 16 * 9).noalias() = dz2 * k.cols2.transpose();
  gvec(kConv2B) = Vec<T>(dz2.rowwise().sum());
  Mat<T> dcols2 = cmap(params[kConv2W].data, 32, 16 * 9).transpose() * dz2;
  Mat<T> dp1 = col2im<T>(dcols2, 16, B, S2);
  Mat<T> dz1 = unpool2<T>(dp1, k.idx1, k.a1.cols());
  dz1 = dz1.cwiseProduct((k.a1.array() > T(0)).template cast<T>().matrix());
  gmap(kConv1W, 16, cin * 9).noalias() = dz1 * k.cols1.transpose();
  gvec(kConv1B) = Vec<T>(dz1.rowwise().sum());
  return g;
}

template <typename T>
std::vector<T> Net<T>::head(const std::vector<T>& features, int batch) const {
  Eigen::Map<const Mat<T>> H(features.data(), kFeatureDim, batch);
  Mat<T> logits = cmap(params[kFc2W].data, classes, kFeatureDim) * H;
  logits.colwise() += vmap(params[kFc2B].data);
  return std::vector<T>(logits.data(), logits.data() + logits.size());
}

template class Net<float>;
template class Net<double>;

// ---------------------------------------------------------------- losses

template <typename T>
LossGrad<T> cross_entropy(const std::vector<T>& logits, const std::vector<int>& labels, int C) {
  const size_t B = labels.size();
  LossGrad<T> out;
  out.grad.assign(logits.size(), T(0));
  if (B == 0) return out;
  if (logits.size() != B * static_cast<size_t>(C)) throw ValidationError("cross_entropy: logits size mismatch");
  double total = 0;
  for (size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || labels[b] >= C) throw ValidationError("cross_entropy: label outside [0,C)");
    const T* z = &logits[b * C];
    double mx = z[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(z[c]));
    double se = 0;
    for (int c = 0; c < C; ++c) se += std::exp(z[c] - mx);
    double lse = mx + std::log(se);
    total += lse - z[labels[b]];
    for (int c = 0; c < C; ++c) {
      double p = std::exp(z[c] - lse);
      out.grad[b * C + c] = T((p - (c == labels[b] ? 1.0 : 0.0)) / static_cast<double>(B));
    }
  }
  out.loss = total / static_cast<double>(B);
  return out;
}

template <typename T>
LossGrad<T> soft_cross_entropy(const std::vector<T>& logits, const std::vector<std::vector<double>>& target, int C) {
  const size_t B = target.size();
  LossGrad<T> out;
  out.grad.assign(logits.size(), T(0));
  if (B == 0) return out;
  if (logits.size() != B * static_cast<size_t>(C)) throw ValidationError("soft_cross_entropy: logits size mismatch");
  double total = 0;
  for (size_t b = 0; b < B; ++b) {
    const T* z = &logits[b * C];
    double mx = z[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(z[c]));
    double se = 0;
    for (int c = 0; c < C; ++c) se += std::exp(z[c] - mx);
    double lse = mx + std::log(se);
    for (int c = 0; c < C; ++c) {
      double p = target[b][c];
      double logq = z[c] - lse;
      if (p > 0) total += p * (std::log(p) - logq);
      out.grad[b * C + c] = T((std::exp(logq) - p) / static_cast<double>(B));
    }
  }
  out.loss = total / static_cast<double>(B);
  return out;
}

PairList random_pairs(int n, SeededRng& rng) {
  auto perm = rng.permutation(static_cast<size_t>(std::max(n, 0)));
  PairList pairs;
  for (int i = 0; i + 1 < n; i += 2) pairs.emplace_back(static_cast<int>(perm[i]), static_cast<int>(perm[i + 1]));
  return pairs;
}

template <typename T>
LossGrad<T> contrastive_loss(const std::vector<T>& f, int dim, const std::vector<int>& labels, const PairList& pairs,
                             double margin) {
  LossGrad<T> out;
  out.grad.assign(f.size(), T(0));
  if (pairs.empty()) return out;
  const double N = static_cast<double>(pairs.size());
  double total = 0;
  std::vector<double> diff(dim);
  for (auto [a, b] : pairs) {
    double d2 = 0;
    for (int j = 0; j < dim; ++j) {
      diff[j] = static_cast<double>(f[static_cast<size_t>(a) * dim + j]) - f[static_cast<size_t>(b) * dim + j];
      d2 += diff[j] * diff[j];
    }
    double d = std::sqrt(d2);
    double coef;
    if (labels[a] == labels[b]) {
      total += d2;
      coef = 1.0 / N;
    } else if (d < margin) {
      total += (margin - d) * (margin - d);
      coef = d > 0 ? -(margin - d) / (N * d) : 0.0;
    } else {
      coef = 0.0;
    }
    for (int j = 0; j < dim; ++j) {
      out.grad[static_cast<size_t>(a) * dim + j] += T(coef * diff[j]);
      out.grad[static_cast<size_t>(b) * dim + j] -= T(coef * diff[j]);
    }
  }
  out.loss = total / (2.0 * N);
  return out;
}

template LossGrad<float> cross_entropy<float>(const std::vector<float>&, const std::vector<int>&, int);
template LossGrad<double> cross_entropy<double>(const std::vector<double>&, const std::vector<int>&, int);
template LossGrad<float> soft_cross_entropy<float>(const std::vector<float>&, const std::vector<std::vector<double>>&,
                                                   int);
template LossGrad<double> soft_cross_entropy<double>(const std::vector<double>&,
                                                     const std::vector<std::vector<double>>&, int);
template LossGrad<float> contrastive_loss<float>(const std::vector<float>&, int, const std::vector<int>&,
                                                 const PairList&, double);
template LossGrad<double> contrastive_loss<double>(const std::vector<double>&, int, const std::vector<int>&,
                                                   const PairList&, double);

// ---------------------------------------------------------------- Adam

template <typename T>
AdamState<T> adam_init(const Net<T>& net, double lr) {
  AdamState<T> s;
  s.m = net.zero_grads();
  s.v = net.zero_grads();
  s.lr = lr;
  return s;
}

template <typename T>
void adam_step(Net<T>& net, const Grads<T>& grads, AdamState<T>& st, const AdamConfig& cfg,
               const std::vector<bool>* mask) {
  if (grads.size() != net.params.size() || st.m.size() != net.params.size())
    throw ValidationError("adam_step: tensor count mismatch");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    if (grads[i].size() != net.params[i].data.size()) throw ValidationError("adam_step: shape mismatch");
    for (T g : grads[i])
      if (!std::isfinite(static_cast<double>(g)))
        throw std::runtime_error("adam_step: non-finite gradient in " + net.params[i].name);
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < grads.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    auto& p = net.params[i].data;
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (size_t j = 0; j < p.size(); ++j) {
      double g = grads[i][j];
      double mj = cfg.beta1 * m[j] + (1 - cfg.beta1) * g;
      double vj = cfg.beta2 * v[j] + (1 - cfg.beta2) * g * g;
      m[j] = T(mj);
      v[j] = T(vj);
      p[j] = T(p[j] - st.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps));
    }
  }
}

template AdamState<float> adam_init<float>(const Net<float>&, double);
template AdamState<double> adam_init<double>(const Net<double>&, double);
template void adam_step<float>(Net<float>&, const Grads<float>&, AdamState<float>&, const AdamConfig&,
                               const std::vector<bool>*);
template void adam_step<double>(Net<double>&, const Grads<double>&, AdamState<double>&, const AdamConfig&,
                                const std::vector<bool>*);

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'W', 'M', 'A', 'R', 'K', 'C', 'K', '\0'};

struct Writer {
  std::vector<uint8_t> buf;
  void u8(uint8_t v) { buf.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    u32(v);
  }
  void f64(double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    u64(v);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
  void floats(const std::vector<float>& v) {
    for (float f : v) f32(f);
  }
};

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  void need(size_t n) {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated");
  }
  uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos++]) << (8 * i);
    return v;
  }
  float f32() {
    uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  double f64() {
    uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }
  void floats(std::vector<float>& v) {
    for (auto& f : v) f = f32();
  }
};

}  // namespace

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.buf.insert(w.buf.end(), kMagic, kMagic + 8);
  w.u32(kCheckpointVersion);
  w.str(ck.net.descriptor());
  w.str(arch_name(ck.net.arch));
  w.u32(static_cast<uint32_t>(ck.net.classes));
  w.u32(static_cast<uint32_t>(ck.net.side));
  w.u32(static_cast<uint32_t>(ck.net.params.size()));
  for (const auto& p : ck.net.params) {
    w.str(p.name);
    w.u32(static_cast<uint32_t>(p.shape.size()));
    for (int d : p.shape) w.u32(static_cast<uint32_t>(d));
    w.floats(p.data);
  }
  w.u8(ck.adam ? 1 : 0);
  if (ck.adam) {
    w.u64(static_cast<uint64_t>(ck.adam->step));
    w.f64(ck.adam->lr);
    for (const auto& m : ck.adam->m) w.floats(m);
    for (const auto& v : ck.adam->v) w.floats(v);
  }
  w.str(ck.config_text);
  w.u64(ck.rng_seed);
  w.u64(ck.rng_counter);
  w.u32(static_cast<uint32_t>(ck.epochs_done));
  return w.buf;
}

Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  r.need(8);
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw std::runtime_error("not a checkpoint (bad magic)");
  r.pos = 8;
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  std::string desc = r.str();
  Arch arch = parse_arch(r.str());
  int classes = static_cast<int>(r.u32());
  int side = static_cast<int>(r.u32());
  Checkpoint ck;
  ck.net = Net<float>(arch, classes, side);
  if (ck.net.descriptor() != desc) throw std::runtime_error("checkpoint descriptor mismatch: " + desc);
  uint32_t count = r.u32();
  if (count != ck.net.params.size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (auto& p : ck.net.params) {
    if (r.str() != p.name) throw std::runtime_error("checkpoint tensor order mismatch at " + p.name);
    uint32_t nd = r.u32();
    if (nd != p.shape.size()) throw std::runtime_error("checkpoint rank mismatch for " + p.name);
    for (int d : p.shape)
      if (static_cast<int>(r.u32()) != d) throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    r.floats(p.data);
  }
  if (r.u8()) {
    AdamState<float> st = adam_init(ck.net, 0);
    st.step = static_cast<int64_t>(r.u64());
    st.lr = r.f64();
    for (auto& m : st.m) r.floats(m);
    for (auto& v : st.v) r.floats(v);
    ck.adam = std::move(st);
  }
  ck.config_text = r.str();
  ck.rng_seed = r.u64();
  ck.rng_counter = r.u64();
  ck.epochs_done = static_cast<int>(r.u32());
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  auto bytes = serialize_checkpoint(ck);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// ---------------------------------------------------------------- oracle

std::vector<double> softmax_row(const float* z, int C) {
  double mx = z[0];
  for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(z[c]));
  std::vector<double> p(C);
  double s = 0;
  for (int c = 0; c < C; ++c) s += (p[c] = std::exp(z[c] - mx));
  for (auto& v : p) v /= s;
  return p;
}

std::vector<int> NetOracle::predict(const std::vector<const ImageU8*>& batch) {
  auto pass = net_.forward(batch);
  std::vector<int> out(batch.size());
  for (size_t b = 0; b < batch.size(); ++b) out[b] = argmax(&pass.logits[b * net_.classes], net_.classes);
  return out;
}

std::vector<std::vector<double>> NetOracle::probabilities(const std::vector<const ImageU8*>& batch) {
  auto pass = net_.forward(batch);
  std::vector<std::vector<double>> out;
  for (size_t b = 0; b < batch.size(); ++b) out.push_back(softmax_row(&pass.logits[b * net_.classes], net_.classes));
  return out;
}

std::vector<float> extract_features(const Net<float>& net, const Dataset& ds, size_t batch) {
  std::vector<float> out;
  out.reserve(ds.size() * kFeatureDim);
  std::vector<const ImageU8*> ptrs;
  for (size_t i = 0; i < ds.size(); i += batch) {
    ptrs.clear();
    for (size_t j = i; j < std::min(ds.size(), i + batch); ++j) ptrs.push_back(&ds.samples[j].image);
    auto pass = net.forward(ptrs);
    out.insert(out.end(), pass.features.begin(), pass.features.end());
  }
  return out;
}

}  // namespace wmark
