#pragma once

#include "coseg/autodiff.hpp"
#include "coseg/checkpoint.hpp"
#include "coseg/optim.hpp"
#include "coseg/tensor.hpp"
