/*
 * seqsynth: MRI sequence synthesis library
 *
 * Copyright 2026 The seqsynth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "seqsynth/autodiff.hpp"
#include "seqsynth/case_io.hpp"
#include "seqsynth/cli.hpp"
#include "seqsynth/dataset.hpp"
#include "seqsynth/errors.hpp"
#include "seqsynth/fusion.hpp"
#include "seqsynth/losses.hpp"
#include "seqsynth/metrics.hpp"
#include "seqsynth/networks.hpp"
#include "seqsynth/nifti.hpp"
#include "seqsynth/phantom.hpp"
#include "seqsynth/preprocess.hpp"
#include "seqsynth/rng.hpp"
#include "seqsynth/tensor.hpp"
#include "seqsynth/trainer.hpp"
#include "seqsynth/vgg.hpp"
#include "seqsynth/volume.hpp"
