#pragma once

#include <string>
#include <string_view>

namespace irbridge {

std::string sha256_hex(std::string_view data);

}  // namespace irbridge
