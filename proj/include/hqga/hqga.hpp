// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "hqga/archive.hpp"
#include "hqga/autograd.hpp"
#include "hqga/config.hpp"
#include "hqga/datamodel.hpp"
#include "hqga/decoder.hpp"
#include "hqga/errors.hpp"
#include "hqga/hierarchy.hpp"
#include "hqga/model.hpp"
#include "hqga/oracle.hpp"
#include "hqga/qga.hpp"
#include "hqga/synthdata.hpp"
#include "hqga/tensor.hpp"
#include "hqga/trace.hpp"
#include "hqga/training.hpp"
