"""Writes a velodyne-style cloud file and its point count.

Records are little-endian float32 x, y, z, reflectance, as in the KITTI
odometry velodyne folders. Run from this directory:

    python3 gen_kitti_fixture.py
"""
import math
import random
import struct

N = 1237
rng = random.Random(7)
with open("kitti_sample.bin", "wb") as f:
    for i in range(N):
        az = 2 * math.pi * i / N
        r = rng.uniform(3.0, 70.0)
        z = rng.uniform(-1.8, 2.5)
        f.write(struct.pack("<4f", r * math.cos(az), r * math.sin(az), z, rng.random()))
with open("kitti_sample.count", "w") as f:
    f.write(f"{N}\n")
