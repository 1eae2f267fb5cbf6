#pragma once

#include "fivl/analysis.hpp"
#include "fivl/config.hpp"
#include "fivl/grounding.hpp"
#include "fivl/image.hpp"
#include "fivl/judge.hpp"
#include "fivl/keyexpr.hpp"
#include "fivl/mask.hpp"
#include "fivl/pipeline.hpp"
#include "fivl/review_service.hpp"
#include "fivl/vision_modeling.hpp"
#include "fivl/visual_reliance.hpp"
