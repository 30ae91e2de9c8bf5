/* Copyright 2026 The EF-Net Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef EFNET_EFNET_HPP_
#define EFNET_EFNET_HPP_

#include "efnet/checkpoint.hpp"
#include "efnet/config.hpp"
#include "efnet/data_io.hpp"
#include "efnet/error.hpp"
#include "efnet/layers.hpp"
#include "efnet/model.hpp"
#include "efnet/ops.hpp"
#include "efnet/synth.hpp"
#include "efnet/tensor.hpp"
#include "efnet/train_eval.hpp"

#endif  // EFNET_EFNET_HPP_
