"""Numba kernels for the staggered-grid P-SV solver.

Grid convention: arrays are (nz, nx), z increasing downward. Cell (j, i)
carries sxx/szz at (i*h, j*h), vx at ((i+1/2)h, j*h), vz at (i*h, (j+1/2)h),
sxz at ((i+1/2)h, (j+1/2)h). The free surface passes through the sxx/szz/vx
row j = jsurf; rows above it are ghost rows written by the stress-image
conditions. CPML strips occupy the first/last ``npml`` columns and the last
``npml`` rows.

Sixth-order staggered stencils are used everywhere except the vertical
derivatives of velocity in the two or three rows under the free surface,
where the order drops (2nd/4th) so stencils never reach above the surface;
the velocity updates keep full order by reading the imaged ghost stresses.
"""

import numpy as np
from numba import njit

# Staggered-grid first-derivative coefficients (Taylor).
C61 = np.float32(75.0 / 64.0)
C62 = np.float32(-25.0 / 384.0)
C63 = np.float32(3.0 / 640.0)
C41 = np.float32(9.0 / 8.0)
C42 = np.float32(-1.0 / 24.0)

SUM_ABS_C6 = 75.0 / 64.0 + 25.0 / 384.0 + 3.0 / 640.0


@njit(cache=True, fastmath=True)
def update_velocity(vx, vz, sxx, szz, sxz, buoy_x, buoy_z,
                    psi_sxx_x, psi_sxz_z, psi_sxz_x, psi_szz_z,
                    a_xh, b_xh, a_xf, b_xf, a_zf, b_zf, a_zh, b_zh,
                    dth, npml, jsurf):
    nz, nx = vx.shape
    for j in range(jsurf, nz - 3):
        in_pml_z = j >= nz - npml
        for i in range(3, nx - 3):
            in_pml_x = i < npml or i >= nx - npml

            dtxx = (C61 * (sxx[j, i + 1] - sxx[j, i])
                    + C62 * (sxx[j, i + 2] - sxx[j, i - 1])
                    + C63 * (sxx[j, i + 3] - sxx[j, i - 2]))
            dtxz_z = (C61 * (sxz[j, i] - sxz[j - 1, i])
                      + C62 * (sxz[j + 1, i] - sxz[j - 2, i])
                      + C63 * (sxz[j + 2, i] - sxz[j - 3, i]))
            if in_pml_x:
                psi_sxx_x[j, i] = b_xh[i] * psi_sxx_x[j, i] + a_xh[i] * dtxx
                dtxx += psi_sxx_x[j, i]
            if in_pml_z:
                psi_sxz_z[j, i] = b_zf[j] * psi_sxz_z[j, i] + a_zf[j] * dtxz_z
                dtxz_z += psi_sxz_z[j, i]
            vx[j, i] += dth * buoy_x[j, i] * (dtxx + dtxz_z)

            dtxz_x = (C61 * (sxz[j, i] - sxz[j, i - 1])
                      + C62 * (sxz[j, i + 1] - sxz[j, i - 2])
                      + C63 * (sxz[j, i + 2] - sxz[j, i - 3]))
            dtzz = (C61 * (szz[j + 1, i] - szz[j, i])
                    + C62 * (szz[j + 2, i] - szz[j - 1, i])
                    + C63 * (szz[j + 3, i] - szz[j - 2, i]))
            if in_pml_x:
                psi_sxz_x[j, i] = b_xf[i] * psi_sxz_x[j, i] + a_xf[i] * dtxz_x
                dtxz_x += psi_sxz_x[j, i]
            if in_pml_z:
                psi_szz_z[j, i] = b_zh[j] * psi_szz_z[j, i] + a_zh[j] * dtzz
                dtzz += psi_szz_z[j, i]
            vz[j, i] += dth * buoy_z[j, i] * (dtxz_x + dtzz)


@njit(cache=True, fastmath=True)
def update_stress(vx, vz, sxx, szz, sxz, lam, l2m, mu_xz, surf_modulus,
                  psi_vx_x, psi_vz_z, psi_vz_x, psi_vx_z,
                  a_xh, b_xh, a_xf, b_xf, a_zf, b_zf, a_zh, b_zh,
                  dth, npml, jsurf):
    nz, nx = vx.shape
    # Free-surface row: szz pinned to zero, sxx driven by the reduced modulus
    # (vertical strain eliminated through the traction-free condition).
    for i in range(3, nx - 3):
        dvx_x = (C61 * (vx[jsurf, i] - vx[jsurf, i - 1])
                 + C62 * (vx[jsurf, i + 1] - vx[jsurf, i - 2])
                 + C63 * (vx[jsurf, i + 2] - vx[jsurf, i - 3]))
        if i < npml or i >= nx - npml:
            psi_vx_x[jsurf, i] = b_xf[i] * psi_vx_x[jsurf, i] + a_xf[i] * dvx_x
            dvx_x += psi_vx_x[jsurf, i]
        sxx[jsurf, i] += dth * surf_modulus[i] * dvx_x
        szz[jsurf, i] = 0.0

    for j in range(jsurf + 1, nz - 3):
        in_pml_z = j >= nz - npml
        for i in range(3, nx - 3):
            in_pml_x = i < npml or i >= nx - npml
            dvx_x = (C61 * (vx[j, i] - vx[j, i - 1])
                     + C62 * (vx[j, i + 1] - vx[j, i - 2])
                     + C63 * (vx[j, i + 2] - vx[j, i - 3]))
            if j == jsurf + 1:
                dvz_z = vz[j, i] - vz[j - 1, i]
            elif j == jsurf + 2:
                dvz_z = (C41 * (vz[j, i] - vz[j - 1, i])
                         + C42 * (vz[j + 1, i] - vz[j - 2, i]))
            else:
                dvz_z = (C61 * (vz[j, i] - vz[j - 1, i])
                         + C62 * (vz[j + 1, i] - vz[j - 2, i])
                         + C63 * (vz[j + 2, i] - vz[j - 3, i]))
            if in_pml_x:
                psi_vx_x[j, i] = b_xf[i] * psi_vx_x[j, i] + a_xf[i] * dvx_x
                dvx_x += psi_vx_x[j, i]
            if in_pml_z:
                psi_vz_z[j, i] = b_zf[j] * psi_vz_z[j, i] + a_zf[j] * dvz_z
                dvz_z += psi_vz_z[j, i]
            sxx[j, i] += dth * (l2m[j, i] * dvx_x + lam[j, i] * dvz_z)
            szz[j, i] += dth * (lam[j, i] * dvx_x + l2m[j, i] * dvz_z)

    for j in range(jsurf, nz - 3):
        in_pml_z = j >= nz - npml
        for i in range(3, nx - 3):
            in_pml_x = i < npml or i >= nx - npml
            dvz_x = (C61 * (vz[j, i + 1] - vz[j, i])
                     + C62 * (vz[j, i + 2] - vz[j, i - 1])
                     + C63 * (vz[j, i + 3] - vz[j, i - 2]))
            if j == jsurf:
                dvx_z = vx[j + 1, i] - vx[j, i]
            elif j == jsurf + 1:
                dvx_z = (C41 * (vx[j + 1, i] - vx[j, i])
                         + C42 * (vx[j + 2, i] - vx[j - 1, i]))
            else:
                dvx_z = (C61 * (vx[j + 1, i] - vx[j, i])
                         + C62 * (vx[j + 2, i] - vx[j - 1, i])
                         + C63 * (vx[j + 3, i] - vx[j - 2, i]))
            if in_pml_x:
                psi_vz_x[j, i] = b_xh[i] * psi_vz_x[j, i] + a_xh[i] * dvz_x
                dvz_x += psi_vz_x[j, i]
            if in_pml_z:
                psi_vx_z[j, i] = b_zh[j] * psi_vx_z[j, i] + a_zh[j] * dvx_z
                dvx_z += psi_vx_z[j, i]
            sxz[j, i] += dth * mu_xz[j, i] * (dvz_x + dvx_z)


@njit(cache=True, fastmath=True)
def apply_surface_images(szz, sxz, jsurf):
    nz, nx = szz.shape
    for i in range(nx):
        szz[jsurf, i] = 0.0
        for m in range(1, 4):
            szz[jsurf - m, i] = -szz[jsurf + m, i]
        for m in range(0, 3):
            sxz[jsurf - 1 - m, i] = -sxz[jsurf + m, i]


@njit(cache=True)
def interior_energy(vx, vz, vx_prev, vz_prev, sxx, szz, sxz,
                    lam, l2m, mu_xz, rho_x, rho_z,
                    h, jsurf, npml, nz_phys, nx_phys):
    """Discrete elastic energy of the physical (non-PML) region.

    Kinetic part uses the time-staggered product v(n+1/2)*v(n-1/2), which is
    the quantity conserved by the leapfrog scheme in lossless media.
    """
    ke = 0.0
    se = 0.0
    for j in range(jsurf, jsurf + nz_phys):
        for i in range(npml, npml + nx_phys):
            ke += 0.5 * (rho_x[j, i] * vx[j, i] * vx_prev[j, i]
                         + rho_z[j, i] * vz[j, i] * vz_prev[j, i])
            mu = 0.5 * (l2m[j, i] - lam[j, i])
            denom = 8.0 * mu * (lam[j, i] + mu)
            se += ((l2m[j, i] * (sxx[j, i] * sxx[j, i] + szz[j, i] * szz[j, i])
                    - 2.0 * lam[j, i] * sxx[j, i] * szz[j, i]) / denom
                   + sxz[j, i] * sxz[j, i] / (2.0 * mu_xz[j, i]))
    return (ke + se) * h * h
