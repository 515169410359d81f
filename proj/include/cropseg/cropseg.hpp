#pragma once

#include "cropseg/checkpoint.hpp"
#include "cropseg/data.hpp"
#include "cropseg/errors.hpp"
#include "cropseg/eval.hpp"
#include "cropseg/forest.hpp"
#include "cropseg/image.hpp"
#include "cropseg/model.hpp"
#include "cropseg/nn.hpp"
#include "cropseg/serialize.hpp"
#include "cropseg/tensor.hpp"
#include "cropseg/train.hpp"
#include "cropseg/transfer.hpp"
