#pragma once

#include <memory>

#include "tip/gateway.hpp"

namespace tip {

std::shared_ptr<ModelBackend> make_http_backend(const ModelEndpoint& endpoint);
std::shared_ptr<ModelBackend> make_mock_backend(const ModelEndpoint& endpoint);

}  // namespace tip
