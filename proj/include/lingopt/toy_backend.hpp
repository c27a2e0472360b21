#pragma once

#include "lingopt/backend.hpp"
#include "lingopt/toymodel.hpp"

namespace lingopt {

/// In-process backend over a trained (or freshly initialized) toy model.
/// Parameters are immutable after construction, so one handle may be shared
/// freely across threads.
class ToyBackend : public ModelBackend {
public:
  explicit ToyBackend(ToyModelParams params, std::string name = "toy");

  LogprobsResponse logprobs(const LogprobsRequest& req) override;
  GenerateResponse generate(const GenerateRequest& req) override;
  HealthStatus healthcheck() override;
  std::string name() const override { return name_; }

  const ToyModelParams& params() const { return params_; }

private:
  std::optional<ImageGrid> decode_image(const std::optional<ImagePayload>& image) const;

  ToyModelParams params_;
  std::string name_;
};

}  // namespace lingopt
