#pragma once

#include "mtscid/checkpoint.hpp"
#include "mtscid/config.hpp"
#include "mtscid/data.hpp"
#include "mtscid/error.hpp"
#include "mtscid/metrics.hpp"
#include "mtscid/model.hpp"
#include "mtscid/pipeline.hpp"
#include "mtscid/random.hpp"
#include "mtscid/scoring.hpp"
#include "mtscid/spectral.hpp"
#include "mtscid/tape.hpp"
#include "mtscid/tensor.hpp"
#include "mtscid/training.hpp"
