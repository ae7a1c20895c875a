#include "rav/avatar3d/ops.hpp"

#include "rav/core/error.hpp"
#include "rav/kernels/composite.hpp"
#include "rav/kernels/triplane.hpp"

namespace rav::avatar3d {
namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

kernels::TriplaneShape triplane_shape(const torch::Tensor& planes, const torch::Tensor& points, double half) {
  kernels::TriplaneShape s;
  s.batch = planes.size(0);
  s.resolution = planes.size(2);
  s.channels = planes.size(4);
  s.points = points.size(1);
  s.half_extent = half;
  return s;
}

struct TriplaneSampleFn : public torch::autograd::Function<TriplaneSampleFn> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& planes, const torch::Tensor& points,
                               double half) {
    const auto p = planes.contiguous();
    const auto q = points.to(p.scalar_type()).contiguous();
    const auto s = triplane_shape(p, q, half);
    auto out = torch::empty({s.batch, s.points, s.channels}, p.options());
    AT_DISPATCH_FLOATING_TYPES(p.scalar_type(), "triplane_sample", [&] {
      kernels::triplane_sample<scalar_t>(s, p.data_ptr<scalar_t>(), q.data_ptr<scalar_t>(), out.data_ptr<scalar_t>());
    });
    ctx->save_for_backward({q});
    ctx->saved_data["half"] = half;
    ctx->saved_data["resolution"] = s.resolution;
    return out;
  }

  static variable_list backward(AutogradContext* ctx, variable_list grads) {
    const auto q = ctx->get_saved_variables()[0];
    const double half = ctx->saved_data["half"].toDouble();
    const auto g = grads[0].contiguous();
    kernels::TriplaneShape s;
    s.batch = g.size(0);
    s.points = g.size(1);
    s.channels = g.size(2);
    s.resolution = ctx->saved_data["resolution"].toInt();
    s.half_extent = half;
    auto gp = torch::empty({s.batch, 3, s.resolution, s.resolution, s.channels}, g.options());
    AT_DISPATCH_FLOATING_TYPES(g.scalar_type(), "triplane_sample_backward", [&] {
      kernels::triplane_sample_backward<scalar_t>(s, g.data_ptr<scalar_t>(), q.data_ptr<scalar_t>(),
                                                  gp.data_ptr<scalar_t>());
    });
    return {gp, torch::Tensor(), torch::Tensor()};
  }
};

/// Runs the compositing kernel; returns {rgb [R, 3], residual transmittance [R]}.
std::pair<torch::Tensor, torch::Tensor> composite_kernel(const torch::Tensor& sg, const torch::Tensor& c,
                                                         const torch::Tensor& dl, const torch::Tensor& bg) {
  const kernels::CompositeShape shape{sg.size(0), sg.size(1)};
  auto out = torch::empty({shape.rays, 3}, sg.options());
  auto trans = torch::empty({shape.rays}, sg.options());
  AT_DISPATCH_FLOATING_TYPES(sg.scalar_type(), "composite", [&] {
    kernels::composite<scalar_t>(shape, sg.data_ptr<scalar_t>(), c.data_ptr<scalar_t>(), dl.data_ptr<scalar_t>(),
                                 bg.data_ptr<scalar_t>(), out.data_ptr<scalar_t>(), trans.data_ptr<scalar_t>());
  });
  return {out, trans};
}

struct CompositeFn : public torch::autograd::Function<CompositeFn> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& sigma, const torch::Tensor& rgb,
                               const torch::Tensor& delta, const torch::Tensor& background) {
    const auto sg = sigma.contiguous(), c = rgb.contiguous();
    const auto dl = delta.to(sg.scalar_type()).contiguous(), bg = background.to(sg.scalar_type()).contiguous();
    ctx->save_for_backward({sg, c, dl, bg});
    return composite_kernel(sg, c, dl, bg).first;
  }

  static variable_list backward(AutogradContext* ctx, variable_list grads) {
    const auto saved = ctx->get_saved_variables();
    const auto &sg = saved[0], &c = saved[1], &dl = saved[2], &bg = saved[3];
    const auto g = grads[0].contiguous();
    const kernels::CompositeShape shape{sg.size(0), sg.size(1)};
    auto gs = torch::empty_like(sg), gc = torch::empty_like(c);
    AT_DISPATCH_FLOATING_TYPES(sg.scalar_type(), "composite_backward", [&] {
      kernels::composite_backward<scalar_t>(shape, sg.data_ptr<scalar_t>(), c.data_ptr<scalar_t>(),
                                            dl.data_ptr<scalar_t>(), bg.data_ptr<scalar_t>(), g.data_ptr<scalar_t>(),
                                            gs.data_ptr<scalar_t>(), gc.data_ptr<scalar_t>());
    });
    return {gs, gc, torch::Tensor(), torch::Tensor()};
  }
};

}  // namespace

torch::Tensor sample_triplane(const torch::Tensor& planes, const torch::Tensor& points, double half_extent) {
  require(planes.dim() == 5 && planes.size(1) == 3 && planes.size(2) == planes.size(3) && planes.size(2) >= 2,
          "tri-plane must be [B, 3, R, R, C] with R >= 2");
  require(points.dim() == 3 && points.size(2) == 3 && points.size(0) == planes.size(0),
          "points must be [B, N, 3] with the tri-plane batch size");
  require(half_extent > 0.0, "tri-plane half extent must be positive");
  require(torch::isfinite(points).all().item<bool>(), "tri-plane query points must be finite");
  return TriplaneSampleFn::apply(planes, points, half_extent);
}

torch::Tensor composite(const torch::Tensor& sigma, const torch::Tensor& rgb, const torch::Tensor& delta,
                        const torch::Tensor& background, torch::Tensor* transmittance) {
  require(sigma.dim() == 2 && delta.sizes() == sigma.sizes(), "sigma and delta must be [rays, samples]");
  require(rgb.dim() == 3 && rgb.size(0) == sigma.size(0) && rgb.size(1) == sigma.size(1) && rgb.size(2) == 3,
          "rgb must be [rays, samples, 3]");
  require(background.numel() == 3, "background must have 3 values");
  const auto out = CompositeFn::apply(sigma, rgb, delta, background);
  if (transmittance) {
    torch::NoGradGuard guard;
    const auto sg = sigma.contiguous();
    *transmittance = composite_kernel(sg, rgb.contiguous(), delta.to(sg.scalar_type()).contiguous(),
                                      background.to(sg.scalar_type()).contiguous())
                         .second;
  }
  return out;
}

}  // namespace rav::avatar3d
