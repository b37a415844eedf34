#pragma once

namespace incentfl {

/// Which aggregation rule the server applies.
enum class Aggregation { Vanilla, Incentive };

}  // namespace incentfl
