#pragma once

#include "cec/error.hpp"
#include "cec/core.hpp"
#include "cec/raster.hpp"
#include "cec/compose.hpp"
#include "cec/prompt.hpp"
#include "cec/backend.hpp"
#include "cec/http.hpp"
#include "cec/evidence.hpp"
#include "cec/verifier.hpp"
#include "cec/dataset.hpp"
#include "cec/evaluation.hpp"
