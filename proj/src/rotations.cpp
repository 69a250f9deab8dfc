#include "flowify/rotations.hpp"

#include "flowify/errors.hpp"

namespace flowify {

RotationParam::RotationParam(std::string name, std::size_t dim)
    : dim_(dim), gen_{std::move(name), DiffArray::zeros({free_count(dim)})} {
  build_index();
}

RotationParam::RotationParam(std::string name, std::size_t dim, double init_std, Rng& rng)
    : dim_(dim) {
  std::vector<double> g(free_count(dim));
  for (auto& v : g) v = init_std * rng.normal();
  const std::size_t count = g.size();
  gen_ = Parameter{std::move(name), DiffArray({count}, std::move(g))};
  build_index();
}

void RotationParam::build_index() {
  auto upper = std::make_shared<std::vector<std::size_t>>();
  auto lower = std::make_shared<std::vector<std::size_t>>();
  upper->reserve(free_count(dim_));
  lower->reserve(free_count(dim_));
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = i + 1; j < dim_; ++j) {
      upper->push_back(i * dim_ + j);
      lower->push_back(j * dim_ + i);
    }
  }
  upper_ = std::move(upper);
  lower_ = std::move(lower);
}

void RotationParam::set_generator(const std::vector<double>& values) {
  if (values.size() != free_count(dim_)) {
    throw DimensionError("rotation generator: expected " + std::to_string(free_count(dim_)) +
                         " entries, got " + std::to_string(values.size()));
  }
  gen_.value = DiffArray({values.size()}, values);
}

DiffArray RotationParam::skew(Context& ctx) const {
  const DiffArray g = ctx.use(gen_);
  return sub(scatter_add(g, upper_, {dim_, dim_}), scatter_add(g, lower_, {dim_, dim_}));
}

DiffArray RotationParam::materialize(Context& ctx) const {
  if (dim_ <= 1) return DiffArray::identity(dim_);
  return matrix_exp(skew(ctx));
}

DiffArray RotationParam::apply(const DiffArray& x, Context& ctx) const {
  if (x.rank() != 2 || x.dim(1) != dim_) {
    throw DimensionError("rotation apply: expected [B, " + std::to_string(dim_) + "], got " +
                         shape_string(x.shape()));
  }
  if (dim_ <= 1) return x;
  return matmul(x, materialize(ctx), false, true);
}

DiffArray RotationParam::apply_inverse(const DiffArray& z, Context& ctx) const {
  if (z.rank() != 2 || z.dim(1) != dim_) {
    throw DimensionError("rotation apply_inverse: expected [B, " + std::to_string(dim_) +
                         "], got " + shape_string(z.shape()));
  }
  if (dim_ <= 1) return z;
  return matmul(z, materialize(ctx));
}

}  // namespace flowify
