"""The two relations on locations."""

from __future__ import annotations

from .syntax import Loc


def can_use(frm: Loc, at: Loc) -> bool:
    """A binding declared on `frm` may be referenced from code on `at`.

    Base declarations are usable everywhere; mixed declarations are usable
    on client and server but not in base code; the relation is reflexive.
    """
    if frm is at:
        return True
    if frm is Loc.BASE:
        return True
    if frm is Loc.MIXED:
        return at in (Loc.SERVER, Loc.CLIENT)
    return False


def can_contain(outer: Loc, inner: Loc) -> bool:
    """A module on `outer` may contain components on `inner`.

    Only mixed modules may contain components of other locations.
    """
    if outer is inner:
        return True
    return outer is Loc.MIXED


def within(mloc: Loc, loc1: Loc, loc2: Loc) -> bool:
    """Both component locations fit in a module on `mloc` and the first
    encompasses the second (subtyping side condition)."""
    return can_contain(mloc, loc1) and can_contain(mloc, loc2) and can_use(loc1, loc2)
