#include "tela/guidance.hpp"

#include <cmath>

#include <httplib.h>
#include <json.hpp>

#include "tela/errors.hpp"

namespace tela {

using nlohmann::json;

double alpha_bar(double t) {
  double c = std::cos(0.5 * kPi * std::clamp(t, 0.0, 1.0));
  return c * c;
}

double sds_weight(double t) { return 1.0 - alpha_bar(t); }

double sample_timestep(Rng& rng, double t_min, double t_max) {
  if (!(t_min > 0 && t_max < 1 && t_min <= t_max))
    throw ConfigError("timestep range must satisfy 0 < t_min <= t_max < 1");
  return rng.uniform(t_min, t_max);
}

Image noise_image(const Image& clean, double t, uint64_t seed) {
  double ab = alpha_bar(t);
  double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  Rng rng(mix64(seed, 0x6e6f697365ull));  // independent noise stream per seed
  Image out(clean.width, clean.height);
  for (size_t i = 0; i < clean.data.size(); ++i)
    out.data[i] = sa * (2.0 * clean.data[i] - 1.0) + sn * rng.normal();
  return out;
}

GuidanceProvider make_synthetic_provider_fn(ReferenceFn reference) {
  if (!reference) throw ConfigError("synthetic provider needs a reference function");
  return [reference](const Image& clean, const GuidanceContext& ctx) -> Image {
    Image ref = reference(ctx);
    if (!ref.same_shape(clean)) ref = resize_bilinear(ref, clean.width, clean.height);
    double ab = alpha_bar(ctx.t);
    double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
    // Noise the input, then predict the noise a perfect denoiser would see
    // if the reference were the true clean image. The injected noise cancels
    // from the residual, matching the closed form sa/sn * 2 (clean - ref).
    Image noised = noise_image(clean, ctx.t, ctx.seed);
    Image residual(clean.width, clean.height);
    for (size_t i = 0; i < residual.data.size(); ++i) {
      double eps_hat = (noised.data[i] - sa * (2.0 * ref.data[i] - 1.0)) / sn;
      double eps = (noised.data[i] - sa * (2.0 * clean.data[i] - 1.0)) / sn;
      residual.data[i] = eps_hat - eps;
    }
    return residual;
  };
}

GuidanceProvider make_synthetic_provider(const Image& reference) {
  if (reference.width < 1 || reference.height < 1)
    throw ConfigError("synthetic provider needs a non-empty reference image");
  return make_synthetic_provider_fn([reference](const GuidanceContext&) { return reference; });
}

namespace {

json image_to_json(const Image& img) {
  json arr = json::array();
  for (double v : img.data) arr.push_back(static_cast<float>(v));
  return arr;
}

std::string body_excerpt(const std::string& body) {
  const size_t limit = 200;
  if (body.size() <= limit) return body;
  return body.substr(0, limit) + "...";
}

}  // namespace

GuidanceProvider make_remote_provider(const RemoteOptions& opt) {
  if (opt.endpoint.empty()) throw ConfigError("remote provider needs an endpoint url");
  return [opt](const Image& clean, const GuidanceContext& ctx) -> Image {
    json req;
    req["width"] = clean.width;
    req["height"] = clean.height;
    req["image"] = image_to_json(clean);
    req["prompt"] = ctx.prompt;
    req["t"] = ctx.t;
    req["seed"] = ctx.seed;
    if (ctx.skeleton) req["skeleton"] = image_to_json(*ctx.skeleton);
    std::string body = req.dump();

    httplib::Client cli(opt.endpoint);
    cli.set_connection_timeout(0, opt.timeout_ms * 1000);
    cli.set_read_timeout(opt.timeout_ms / 1000, (opt.timeout_ms % 1000) * 1000);
    cli.set_write_timeout(opt.timeout_ms / 1000, (opt.timeout_ms % 1000) * 1000);

    httplib::Result res;
    for (int attempt = 0; attempt <= opt.retries; ++attempt) {
      res = cli.Post("/v1/residual", body, "application/json");
      if (res) break;
    }
    if (!res)
      throw RetriableError("guidance service at " + opt.endpoint + " unreachable after " +
                           std::to_string(opt.retries + 1) + " attempts (" +
                           httplib::to_string(res.error()) + ")");
    if (res->status < 200 || res->status >= 300)
      throw ServiceError("guidance service returned HTTP " + std::to_string(res->status) + ": " +
                         body_excerpt(res->body));

    json doc;
    try {
      doc = json::parse(res->body);
    } catch (const json::exception&) {  // parse errors and number overflows alike
      throw ProtocolError("guidance response is not JSON: " + body_excerpt(res->body));
    }
    if (!doc.is_object() || !doc.contains("residual") || !doc["residual"].is_array())
      throw ProtocolError("guidance response lacks a residual array: " + body_excerpt(res->body));
    const json& arr = doc["residual"];
    if (arr.size() != clean.values())
      throw ProtocolError("guidance residual has " + std::to_string(arr.size()) +
                          " values, expected " + std::to_string(clean.values()));
    Image out(clean.width, clean.height);
    for (size_t i = 0; i < out.data.size(); ++i) {
      if (!arr[i].is_number()) throw ProtocolError("guidance residual holds a non-number");
      out.data[i] = arr[i].get<double>();
      if (!std::isfinite(out.data[i])) throw ProtocolError("guidance residual is not finite");
    }
    return out;
  };
}

Image sds_pixel_grad(const Image& residual, double t) {
  double w = sds_weight(t);
  Image g(residual.width, residual.height);
  for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = w * residual.data[i];
  return g;
}

}  // namespace tela
