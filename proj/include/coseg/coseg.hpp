#pragma once

#include "coseg/boundary.hpp"
#include "coseg/config.hpp"
#include "coseg/core_math.hpp"
#include "coseg/data.hpp"
#include "coseg/embedding.hpp"
#include "coseg/evaluation.hpp"
#include "coseg/pipeline.hpp"
#include "coseg/reconstruction.hpp"
