#include "tela/deform.hpp"

#include <cmath>

#include "tela/errors.hpp"

namespace tela {

namespace {

struct DeformLayout {
  std::vector<size_t> w, b;
  size_t out_w = 0, out_b = 0;
};

DeformLayout layout_of(const DeformationField& d) {
  DeformLayout lo;
  for (int i = 0; i < d.spec.hidden_layers; ++i) {
    const BlockInfo* w = d.params.find("w" + std::to_string(i));
    const BlockInfo* b = d.params.find("b" + std::to_string(i));
    if (!w || !b) throw Error("deform: parameter pack is missing a layer block");
    lo.w.push_back(w->offset);
    lo.b.push_back(b->offset);
  }
  lo.out_w = d.params.find("out_w")->offset;
  lo.out_b = d.params.find("out_b")->offset;
  return lo;
}

// sin/cos ladder per coordinate: [sin(2^k pi x), cos(2^k pi x)]_k
void positional_encode(const DeformSpec& spec, const Vec3& pos, double* out) {
  int idx = 0;
  for (int a = 0; a < 3; ++a) {
    double x = pos[a];
    for (int k = 0; k < spec.frequencies; ++k) {
      double arg = std::ldexp(kPi * x, k);  // 2^k pi x
      out[idx++] = std::sin(arg);
      out[idx++] = std::cos(arg);
    }
  }
}

struct DeformForward {
  Vec3 raw;       // preactivation of the bounded output
  Vec3 out;
};

DeformForward forward(const DeformationField& d, const DeformLayout& lo, const Vec3& pos,
                      FieldScratch& s) {
  const float* p = d.params.values.data();
  const int W = d.spec.hidden_width;
  const int H = d.spec.hidden_layers;
  const int D = d.spec.encoding_dim();
  s.encoded.resize(size_t(D));
  positional_encode(d.spec, pos, s.encoded.data());
  s.pre.resize(size_t(H) * W);
  s.post.resize(size_t(H) * W);

  const double* input = s.encoded.data();
  int in_dim = D;
  for (int l = 0; l < H; ++l) {
    const float* w = p + lo.w[size_t(l)];
    const float* b = p + lo.b[size_t(l)];
    double* pre = s.pre.data() + size_t(l) * W;
    double* post = s.post.data() + size_t(l) * W;
    for (int j = 0; j < W; ++j) {
      double acc = double(b[j]);
      const float* row = w + size_t(j) * in_dim;
      for (int k = 0; k < in_dim; ++k) acc += double(row[k]) * input[k];
      pre[j] = acc;
      post[j] = acc > 0 ? acc : 0.0;
    }
    input = post;
    in_dim = W;
  }

  const double* h = s.post.data() + size_t(H - 1) * W;
  DeformForward f;
  for (int c = 0; c < 3; ++c) {
    double acc = double(p[lo.out_b + size_t(c)]);
    for (int j = 0; j < W; ++j) acc += double(p[lo.out_w + size_t(c) * W + j]) * h[j];
    f.raw[c] = acc;
    f.out[c] = d.spec.max_displacement * std::tanh(acc);
  }
  return f;
}

}  // namespace

DeformationField init_deform(const DeformSpec& spec, uint64_t seed) {
  if (spec.frequencies < 1 || spec.hidden_layers < 1 || spec.hidden_width < 1)
    throw ConfigError("deform: spec must be positive");
  if (!(spec.max_displacement > 0)) throw ConfigError("deform: max displacement must be positive");
  DeformationField d;
  d.spec = spec;
  Rng rng(seed);
  const int W = spec.hidden_width;
  int in_dim = spec.encoding_dim();
  for (int l = 0; l < spec.hidden_layers; ++l) {
    int fan_in = l == 0 ? in_dim : W;
    double bound = 1.0 / std::sqrt(double(fan_in));
    size_t off = d.params.add_block("w" + std::to_string(l), size_t(W) * fan_in);
    for (size_t i = 0; i < size_t(W) * fan_in; ++i)
      d.params.values[off + i] = static_cast<float>(rng.uniform(-bound, bound));
    d.params.add_block("b" + std::to_string(l), size_t(W));
  }
  // zero output layer: a fresh deformation is the exact identity
  d.params.add_block("out_w", size_t(3) * W);
  d.params.add_block("out_b", 3);
  return d;
}

Vec3 deform_eval(const DeformationField& d, const Vec3& pos, FieldScratch& scratch) {
  DeformLayout lo = layout_of(d);
  return forward(d, lo, pos, scratch).out;
}

void deform_backward(const DeformationField& d, const Vec3& pos, const Vec3& d_out,
                     std::vector<double>& grad, FieldScratch& scratch) {
  if (grad.size() != d.params.size()) throw Error("deform_backward: gradient size mismatch");
  DeformLayout lo = layout_of(d);
  DeformForward f = forward(d, lo, pos, scratch);
  const float* p = d.params.values.data();
  const int W = d.spec.hidden_width;
  const int H = d.spec.hidden_layers;
  const int D = d.spec.encoding_dim();

  Vec3 d_raw;
  for (int c = 0; c < 3; ++c) {
    double th = std::tanh(f.raw[c]);
    d_raw[c] = d_out[c] * d.spec.max_displacement * (1.0 - th * th);
  }

  scratch.d_buf.assign(size_t(W), 0.0);
  double* d_post = scratch.d_buf.data();
  const double* h_last = scratch.post.data() + size_t(H - 1) * W;
  for (int c = 0; c < 3; ++c) {
    grad[lo.out_b + size_t(c)] += d_raw[c];
    for (int j = 0; j < W; ++j) {
      grad[lo.out_w + size_t(c) * W + j] += d_raw[c] * h_last[j];
      d_post[j] += double(p[lo.out_w + size_t(c) * W + j]) * d_raw[c];
    }
  }

  std::vector<double> d_in;
  for (int l = H - 1; l >= 0; --l) {
    int in_dim = l == 0 ? D : W;
    const double* input = l == 0 ? scratch.encoded.data() : scratch.post.data() + size_t(l - 1) * W;
    const double* pre = scratch.pre.data() + size_t(l) * W;
    const float* w = p + lo.w[size_t(l)];
    d_in.assign(size_t(in_dim), 0.0);
    for (int j = 0; j < W; ++j) {
      if (pre[j] <= 0) continue;
      double dj = d_post[j];
      grad[lo.b[size_t(l)] + size_t(j)] += dj;
      const float* row = w + size_t(j) * in_dim;
      double* gw = grad.data() + lo.w[size_t(l)] + size_t(j) * in_dim;
      for (int k = 0; k < in_dim; ++k) {
        gw[k] += dj * input[k];
        d_in[size_t(k)] += double(row[k]) * dj;
      }
    }
    scratch.d_buf.assign(d_in.begin(), d_in.end());
    d_post = scratch.d_buf.data();
  }
}

}  // namespace tela
