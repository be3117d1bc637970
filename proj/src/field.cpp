#include "tela/field.hpp"

#include <cassert>
#include <cmath>

#include "tela/errors.hpp"

namespace tela {

size_t ParamPack::add_block(const std::string& name, size_t count) {
  size_t offset = values.size();
  blocks.push_back({name, offset, count});
  values.resize(offset + count, 0.0f);
  return offset;
}

const BlockInfo* ParamPack::find(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return &b;
  return nullptr;
}

double GridSpec::per_level_scale() const {
  if (levels <= 1) return 1.0;
  return std::exp((std::log(double(max_resolution)) - std::log(double(base_resolution))) /
                  (levels - 1));
}

int GridSpec::resolution(int level) const {
  double b = per_level_scale();
  // the ladder hits exact integers at (and between) the endpoints; the bump
  // keeps floor from dropping a rung that is an integer up to rounding
  return static_cast<int>(std::floor(base_resolution * std::pow(b, level) + 1e-9));
}

uint32_t grid_hash(uint32_t x, uint32_t y, uint32_t z, uint32_t table_size) {
  uint32_t h = x * 73856093u ^ y * 19349663u ^ z * 83492791u;
  return h % table_size;
}

double density_bias_init() { return std::log(std::expm1(0.1)); }

namespace {

struct MlpLayout {
  // offsets into the flat parameter vector
  std::vector<size_t> w, b;  // hidden layers
  size_t sigma_w = 0, sigma_b = 0, color_w = 0, color_b = 0;
  size_t grid = 0;
};

MlpLayout layout_of(const RadianceField& f) {
  MlpLayout lo;
  const BlockInfo* g = f.params.find("grid");
  if (!g) throw Error("field: parameter pack has no grid block");
  lo.grid = g->offset;
  for (int i = 0; i < f.mlp.hidden_layers; ++i) {
    const BlockInfo* w = f.params.find("mlp/w" + std::to_string(i));
    const BlockInfo* b = f.params.find("mlp/b" + std::to_string(i));
    if (!w || !b) throw Error("field: parameter pack is missing an mlp layer block");
    lo.w.push_back(w->offset);
    lo.b.push_back(b->offset);
  }
  lo.sigma_w = f.params.find("mlp/sigma_w")->offset;
  lo.sigma_b = f.params.find("mlp/sigma_b")->offset;
  lo.color_w = f.params.find("mlp/color_w")->offset;
  lo.color_b = f.params.find("mlp/color_b")->offset;
  return lo;
}

}  // namespace

RadianceField init_field(const GridSpec& grid, const MlpSpec& mlp, const Aabb& aabb,
                         uint64_t seed) {
  if (grid.levels < 1 || grid.features < 1 || grid.table_size < 1)
    throw ConfigError("field: grid spec must be positive");
  if (grid.base_resolution < 1 || grid.max_resolution < grid.base_resolution)
    throw ConfigError("field: grid resolutions must satisfy 1 <= base <= max");
  if (mlp.hidden_layers < 1 || mlp.hidden_width < 1)
    throw ConfigError("field: mlp spec must be positive");
  if (!aabb.valid()) throw ConfigError("field: invalid aabb");

  RadianceField f;
  f.grid = grid;
  f.mlp = mlp;
  f.aabb = aabb;

  Rng rng(seed);
  size_t goff = f.params.add_block("grid", grid.param_count());
  for (size_t i = 0; i < grid.param_count(); ++i)
    f.params.values[goff + i] = static_cast<float>(rng.uniform(-1e-4, 1e-4));

  int in_dim = f.encoding_dim();
  const int W = mlp.hidden_width;
  for (int l = 0; l < mlp.hidden_layers; ++l) {
    int fan_in = l == 0 ? in_dim : W;
    double bound = 1.0 / std::sqrt(double(fan_in));
    size_t woff = f.params.add_block("mlp/w" + std::to_string(l), size_t(W) * fan_in);
    for (size_t i = 0; i < size_t(W) * fan_in; ++i)
      f.params.values[woff + i] = static_cast<float>(rng.uniform(-bound, bound));
    f.params.add_block("mlp/b" + std::to_string(l), size_t(W));  // zeros
  }
  double head_bound = 1.0 / std::sqrt(double(W));
  size_t swoff = f.params.add_block("mlp/sigma_w", size_t(W));
  for (int i = 0; i < W; ++i)
    f.params.values[swoff + i] = static_cast<float>(rng.uniform(-head_bound, head_bound));
  size_t sboff = f.params.add_block("mlp/sigma_b", 1);
  f.params.values[sboff] = static_cast<float>(density_bias_init());
  size_t cwoff = f.params.add_block("mlp/color_w", size_t(3) * W);
  for (size_t i = 0; i < size_t(3) * W; ++i)
    f.params.values[cwoff + i] = static_cast<float>(rng.uniform(-head_bound, head_bound));
  f.params.add_block("mlp/color_b", 3);  // zeros
  return f;
}

namespace {

// Encodes one point. Fills corner_index/corner_weight (levels*8) and the
// cell-local coordinates (levels*3, appended to corner_weight's backing store
// via the separate `local` pointer) used for position derivatives.
void encode_impl(const RadianceField& f, const Vec3& pos, double* out, uint32_t* corner_index,
                 double* corner_weight, double* local) {
  const float* grid = f.params.values.data() + f.params.find("grid")->offset;
  const int F = f.grid.features;
  const uint32_t T = f.grid.table_size;
  Vec3 ext = f.aabb.extent();
  Vec3 u{(pos.x - f.aabb.lo.x) / ext.x, (pos.y - f.aabb.lo.y) / ext.y,
         (pos.z - f.aabb.lo.z) / ext.z};

  for (int l = 0; l < f.grid.levels; ++l) {
    int n = f.grid.resolution(l);
    double sx = u.x * n, sy = u.y * n, sz = u.z * n;
    int bx = std::min(int(std::floor(sx)), n - 1);
    int by = std::min(int(std::floor(sy)), n - 1);
    int bz = std::min(int(std::floor(sz)), n - 1);
    bx = std::max(bx, 0);
    by = std::max(by, 0);
    bz = std::max(bz, 0);
    double tx = sx - bx, ty = sy - by, tz = sz - bz;
    if (local) {
      local[l * 3 + 0] = tx;
      local[l * 3 + 1] = ty;
      local[l * 3 + 2] = tz;
    }
    for (int fi = 0; fi < F; ++fi) out[l * F + fi] = 0.0;
    for (int c = 0; c < 8; ++c) {
      int cx = bx + (c & 1), cy = by + ((c >> 1) & 1), cz = bz + ((c >> 2) & 1);
      double w = ((c & 1) ? tx : 1 - tx) * ((c & 2) ? ty : 1 - ty) * ((c & 4) ? tz : 1 - tz);
      uint32_t idx = grid_hash(uint32_t(cx), uint32_t(cy), uint32_t(cz), T);
      corner_index[l * 8 + c] = idx;
      corner_weight[l * 8 + c] = w;
      const float* entry = grid + (size_t(l) * T + idx) * F;
      for (int fi = 0; fi < F; ++fi) out[l * F + fi] += w * double(entry[fi]);
    }
  }
}

struct ForwardState {
  double sigma_raw = 0;
  Vec3 color_raw;
  FieldOutput out;
};

ForwardState mlp_forward(const RadianceField& f, const MlpLayout& lo, const double* enc,
                         FieldScratch& s) {
  const float* p = f.params.values.data();
  const int W = f.mlp.hidden_width;
  const int H = f.mlp.hidden_layers;
  s.pre.resize(size_t(H) * W);
  s.post.resize(size_t(H) * W);

  const double* input = enc;
  int in_dim = f.encoding_dim();
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
  ForwardState st;
  st.sigma_raw = double(p[lo.sigma_b]);
  for (int j = 0; j < W; ++j) st.sigma_raw += double(p[lo.sigma_w + j]) * h[j];
  for (int c = 0; c < 3; ++c) {
    double acc = double(p[lo.color_b + c]);
    for (int j = 0; j < W; ++j) acc += double(p[lo.color_w + size_t(c) * W + j]) * h[j];
    st.color_raw[c] = acc;
  }
  st.out.sigma = softplus(st.sigma_raw);
  st.out.color = Vec3{sigmoid(st.color_raw.x), sigmoid(st.color_raw.y), sigmoid(st.color_raw.z)};
  return st;
}

}  // namespace

void hash_encode(const RadianceField& field, const Vec3& pos, double* out,
                 FieldScratch& scratch) {
  scratch.corner_index.resize(size_t(field.grid.levels) * 8);
  scratch.corner_weight.resize(size_t(field.grid.levels) * 8);
  scratch.d_buf2.resize(size_t(field.grid.levels) * 3);
  encode_impl(field, pos, out, scratch.corner_index.data(), scratch.corner_weight.data(),
              scratch.d_buf2.data());
}

FieldOutput field_eval(const RadianceField& field, const Vec3& pos, FieldScratch& scratch) {
  if (!field.aabb.contains(pos)) return FieldOutput{};
  MlpLayout lo = layout_of(field);
  scratch.encoded.resize(size_t(field.encoding_dim()));
  hash_encode(field, pos, scratch.encoded.data(), scratch);
  return mlp_forward(field, lo, scratch.encoded.data(), scratch).out;
}

void field_backward(const RadianceField& field, const Vec3& pos, double d_sigma,
                    const Vec3& d_color, std::vector<double>* grad, FieldScratch& scratch,
                    Vec3* d_pos) {
  if (!field.aabb.contains(pos)) return;
  assert(!grad || grad->size() == field.params.size());
  MlpLayout lo = layout_of(field);
  const float* p = field.params.values.data();
  const int W = field.mlp.hidden_width;
  const int H = field.mlp.hidden_layers;
  const int D = field.encoding_dim();
  const int F = field.grid.features;
  const uint32_t T = field.grid.table_size;

  scratch.encoded.resize(size_t(D));
  hash_encode(field, pos, scratch.encoded.data(), scratch);
  ForwardState st = mlp_forward(field, lo, scratch.encoded.data(), scratch);

  double d_sigma_raw = d_sigma * sigmoid(st.sigma_raw);
  Vec3 d_color_raw;
  for (int c = 0; c < 3; ++c) {
    double s = sigmoid(st.color_raw[c]);
    d_color_raw[c] = d_color[c] * s * (1 - s);
  }

  // heads
  scratch.d_buf.assign(size_t(W), 0.0);
  double* d_post = scratch.d_buf.data();
  const double* h_last = scratch.post.data() + size_t(H - 1) * W;
  for (int j = 0; j < W; ++j) d_post[j] += double(p[lo.sigma_w + size_t(j)]) * d_sigma_raw;
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < W; ++j)
      d_post[j] += double(p[lo.color_w + size_t(c) * W + j]) * d_color_raw[c];
  if (grad) {
    (*grad)[lo.sigma_b] += d_sigma_raw;
    for (int j = 0; j < W; ++j) (*grad)[lo.sigma_w + size_t(j)] += d_sigma_raw * h_last[j];
    for (int c = 0; c < 3; ++c) {
      (*grad)[lo.color_b + size_t(c)] += d_color_raw[c];
      for (int j = 0; j < W; ++j)
        (*grad)[lo.color_w + size_t(c) * W + j] += d_color_raw[c] * h_last[j];
    }
  }

  // hidden stack, walking back to the encoding
  std::vector<double> d_in;
  for (int l = H - 1; l >= 0; --l) {
    int in_dim = l == 0 ? D : W;
    const double* input = l == 0 ? scratch.encoded.data() : scratch.post.data() + size_t(l - 1) * W;
    const double* pre = scratch.pre.data() + size_t(l) * W;
    const float* w = p + lo.w[size_t(l)];
    d_in.assign(size_t(in_dim), 0.0);
    for (int j = 0; j < W; ++j) {
      if (pre[j] <= 0) continue;  // relu gate
      double dj = d_post[j];
      const float* row = w + size_t(j) * in_dim;
      if (grad) {
        (*grad)[lo.b[size_t(l)] + size_t(j)] += dj;
        double* gw = grad->data() + lo.w[size_t(l)] + size_t(j) * in_dim;
        for (int k = 0; k < in_dim; ++k) {
          gw[k] += dj * input[k];
          d_in[size_t(k)] += double(row[k]) * dj;
        }
      } else {
        for (int k = 0; k < in_dim; ++k) d_in[size_t(k)] += double(row[k]) * dj;
      }
    }
    scratch.d_buf.assign(d_in.begin(), d_in.end());
    d_post = scratch.d_buf.data();
  }
  // d_buf now holds d(loss)/d(encoding)
  const double* d_enc = scratch.d_buf.data();

  const float* grid = p + lo.grid;
  const double* local = scratch.d_buf2.data();  // filled by hash_encode
  for (int l = 0; l < field.grid.levels; ++l) {
    double tx = local[l * 3], ty = local[l * 3 + 1], tz = local[l * 3 + 2];
    for (int c = 0; c < 8; ++c) {
      uint32_t idx = scratch.corner_index[size_t(l) * 8 + c];
      double wgt = scratch.corner_weight[size_t(l) * 8 + c];
      const float* entry = grid + (size_t(l) * T + idx) * F;
      double gdot = 0;  // sum_f d_enc * feature, reused for d_pos
      for (int fi = 0; fi < F; ++fi) {
        double de = d_enc[l * F + fi];
        if (grad) (*grad)[lo.grid + (size_t(l) * T + idx) * F + fi] += wgt * de;
        gdot += de * double(entry[fi]);
      }
      if (d_pos) {
        double wx = (c & 1) ? tx : 1 - tx;
        double wy = (c & 2) ? ty : 1 - ty;
        double wz = (c & 4) ? tz : 1 - tz;
        double sx = (c & 1) ? 1.0 : -1.0;
        double sy = (c & 2) ? 1.0 : -1.0;
        double sz = (c & 4) ? 1.0 : -1.0;
        int n = field.grid.resolution(l);
        Vec3 ext = field.aabb.extent();
        d_pos->x += gdot * sx * wy * wz * n / ext.x;
        d_pos->y += gdot * wx * sy * wz * n / ext.y;
        d_pos->z += gdot * wx * wy * sz * n / ext.z;
      }
    }
  }
}

}  // namespace tela
