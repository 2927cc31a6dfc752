#pragma once

namespace pcc {

enum class OpStatus { Ok, Duplicate, NotFound };

}  // namespace pcc
