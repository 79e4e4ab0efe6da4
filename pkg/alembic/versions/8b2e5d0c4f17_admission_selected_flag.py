"""admission selected flag

Revision ID: 8b2e5d0c4f17
Revises: 3f1c2a9d7e41
Create Date: 2026-10-16 09:42:17.530981

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = '8b2e5d0c4f17'
down_revision: Union[str, Sequence[str], None] = '3f1c2a9d7e41'
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


def upgrade() -> None:
    """Upgrade schema."""
    # ### commands auto generated by Alembic - please adjust! ###
    with op.batch_alter_table('pseudo_seed_admissions', schema=None) as batch_op:
        batch_op.add_column(sa.Column('selected', sa.Boolean(), server_default=sa.false(), nullable=False))

    # ### end Alembic commands ###


def downgrade() -> None:
    """Downgrade schema."""
    # ### commands auto generated by Alembic - please adjust! ###
    with op.batch_alter_table('pseudo_seed_admissions', schema=None) as batch_op:
        batch_op.drop_column('selected')

    # ### end Alembic commands ###
