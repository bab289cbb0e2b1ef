// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "mfa/adapter.hpp"
#include "mfa/checkpoint.hpp"
#include "mfa/dataset.hpp"
#include "mfa/encoders.hpp"
#include "mfa/error.hpp"
#include "mfa/evaluation.hpp"
#include "mfa/io.hpp"
#include "mfa/metadata.hpp"
#include "mfa/objectives.hpp"
#include "mfa/optimizer.hpp"
#include "mfa/random.hpp"
#include "mfa/splits.hpp"
#include "mfa/synthetic.hpp"
#include "mfa/tensor.hpp"
#include "mfa/training.hpp"
#include "mfa/tsne.hpp"
#include "mfa/validation.hpp"
