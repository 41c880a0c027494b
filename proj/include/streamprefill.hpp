/* Copyright 2026 The streamprefill Authors. All Rights Reserved.

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

#pragma once

#include "streamprefill/bench.hpp"
#include "streamprefill/costmodel.hpp"
#include "streamprefill/domain.hpp"
#include "streamprefill/experiment.hpp"
#include "streamprefill/kvcache.hpp"
#include "streamprefill/metrics.hpp"
#include "streamprefill/scheduler.hpp"
#include "streamprefill/simulator.hpp"
#include "streamprefill/stats.hpp"
#include "streamprefill/workload.hpp"
